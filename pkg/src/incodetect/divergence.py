"""Relative entropies, their perturbative forms and the sample-complexity table."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .statemodel import (
    RANK_TOL,
    DensityMatrix,
    SensingScenario,
    hermitian_eigh,
    support_projectors,
)


@dataclass(frozen=True)
class Divergence:
    """Extended-real divergence value.

    ``infinite`` is set when the first argument has weight outside the
    support of the second; ``value`` is then ``inf``. Use ``float(d)`` to get
    a plain number.
    """

    value: float
    infinite: bool = False

    def __float__(self) -> float:
        return math.inf if self.infinite else self.value

    @classmethod
    def inf(cls) -> Divergence:
        return cls(math.inf, True)


class SupportError(ValueError):
    """Raised when an operation is applied on the wrong side of the
    support-extending / support-preserving divide."""


class AsymptoticRegimeWarning(UserWarning):
    pass


def _check_pair(rho: DensityMatrix, sigma: DensityMatrix):
    if rho.dim != sigma.dim:
        raise ValueError(f"dimension mismatch: {rho.dim} vs {sigma.dim}")


def kl_divergence(
    rho: DensityMatrix, sigma: DensityMatrix, rank_tol: float = RANK_TOL
) -> Divergence:
    """Quantum relative entropy tr rho (log rho - log sigma).

    ``log sigma`` is only ever evaluated on supp(sigma); if rho puts more
    than ``rank_tol`` weight on ker(sigma) the result is infinite.
    """
    _check_pair(rho, sigma)
    ws, vs = sigma.eigh()
    on = ws > rank_tol
    # diagonal of rho in sigma's eigenbasis
    rho_diag = np.einsum("ij,jk,ki->i", vs.conj().T, rho.entries, vs).real
    if rho_diag[~on].sum() > rank_tol:
        return Divergence.inf()
    cross = float(np.dot(rho_diag[on], np.log(ws[on])))
    wr = np.linalg.eigvalsh(rho.entries)
    wr = wr[wr > 0]
    neg_entropy = float(np.dot(wr, np.log(wr)))
    value = neg_entropy - cross
    if value < -1e-10:
        raise ArithmeticError(f"relative entropy came out negative ({value:.3e})")
    return Divergence(max(value, 0.0))


def _psd_power(a: np.ndarray, p: float) -> np.ndarray:
    w, v = hermitian_eigh(a)
    w = np.clip(w, 0.0, None)
    wp = np.where(w > 0, w, 1.0) ** p
    wp = np.where(w > 0, wp, 0.0)
    return (v * wp) @ v.conj().T


def tsallis_divergence(rho: DensityMatrix, sigma: DensityMatrix, q: float) -> float:
    """Tsallis relative entropy (1 - tr rho^q sigma^(1-q)) / (1 - q), q in (0, 1)."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    _check_pair(rho, sigma)
    t = np.trace(_psd_power(rho.entries, q) @ _psd_power(sigma.entries, 1.0 - q)).real
    return float((1.0 - t) / (1.0 - q))


def kl_first_order(scenario: SensingScenario, vartheta0: float) -> float:
    """Leading term vartheta0 * tr(Delta_perp) of D(rho_n || rho_n + vartheta0 Delta).

    Only meaningful for support-extending perturbations; for a
    support-preserving one use :func:`kmb_fisher_information`.
    """
    tr_perp = float(np.trace(scenario.delta_perp).real)
    if tr_perp <= scenario.rank_tol:
        raise SupportError(
            "perturbation is support-preserving (tr Delta_perp = 0); "
            "the divergence is quadratic, use kmb_fisher_information"
        )
    return vartheta0 * tr_perp


_FUNCTIONS: dict[str, tuple[Callable, Callable]] = {
    "log": (np.log, lambda x: 1.0 / x),
}


def _power_fns(p: float) -> tuple[Callable, Callable]:
    return (lambda x: np.power(x, p), lambda x: p * np.power(x, p - 1.0))


@dataclass(frozen=True, eq=False)
class DividedDifferenceTable:
    lam: np.ndarray
    entries: np.ndarray
    extended: bool
    fn: str = "log"


def divided_difference(
    fn: str,
    lam,
    extended: bool = False,
    q: float | None = None,
    tol: float = 1e-12,
) -> DividedDifferenceTable:
    """First divided difference [f, lam]^[1] of ``fn`` at the points ``lam``.

    ``fn`` is ``"log"`` or ``"pow"`` (x -> x^(1-q), ``q`` required).
    Off-diagonal entries are difference quotients; coincident positive points
    use f'(lam_j). Coincident zeros are only allowed with ``extended=True``,
    where the entry is 1 by convention.
    """
    lam = np.asarray(lam, dtype=float)
    if fn == "log":
        f, df = _FUNCTIONS["log"]
    elif fn == "pow":
        if q is None or not 0.0 < q < 1.0:
            raise ValueError("fn='pow' needs q in (0, 1)")
        f, df = _power_fns(1.0 - q)
    else:
        raise ValueError(f"unknown function {fn!r}; use 'log' or 'pow'")
    zero = lam <= tol
    if zero.any() and not extended:
        raise ValueError(f"zero eigenvalue with extended=False is undefined for {fn!r}")

    n = lam.size
    out = np.empty((n, n))
    with np.errstate(divide="ignore", invalid="ignore"):
        fl = np.where(zero, 0.0, f(np.where(zero, 1.0, lam)))
        if fn == "log":
            fl = np.where(zero, -np.inf, fl)
        for j in range(n):
            for k in range(n):
                a, b = lam[j], lam[k]
                if abs(a - b) <= tol * max(1.0, abs(a), abs(b)):
                    out[j, k] = 1.0 if zero[j] else df(a)
                elif fn == "log" and not (zero[j] or zero[k]):
                    # log1p form avoids cancellation for close eigenvalues
                    out[j, k] = np.log1p((a - b) / b) / (a - b)
                else:
                    out[j, k] = (fl[j] - fl[k]) / (a - b)
    return DividedDifferenceTable(lam=lam, entries=out, extended=extended, fn=fn)


def kmb_fisher_information(
    rho_n: DensityMatrix, delta: np.ndarray, rank_tol: float = RANK_TOL
) -> float:
    """Kubo-Mori-Bogoliubov Fisher information of the perturbation ``delta``.

    Sum over the support eigenbasis of rho_n of
    [log, lam]^[1]_jk |<j|delta|k>|^2. ``delta`` must not leave supp(rho_n).
    """
    delta = np.asarray(delta, dtype=complex)
    w, v = rho_n.eigh()
    on = w > rank_tol
    _, pp = support_projectors(rho_n, rank_tol)
    leak = np.max(np.abs(pp @ delta)) if (~on).any() else 0.0
    if leak > max(rank_tol, 1e-8):
        raise SupportError("delta extends outside supp(rho_n); use kl_first_order")
    vs = v[:, on]
    d_eig = vs.conj().T @ delta @ vs
    table = divided_difference("log", w[on])
    return float(np.sum(table.entries * np.abs(d_eig) ** 2))


def bernoulli_kl(n: float, theta0: float) -> float:
    """KL divergence between Bernoulli(n) and Bernoulli(n + theta0)."""
    if n < 0 or theta0 < 0 or n + theta0 > 1:
        raise ValueError(f"need 0 <= n, 0 <= theta0, n + theta0 <= 1 (got {n}, {theta0})")
    if theta0 == 0:
        return 0.0
    if n + theta0 == 1:
        return math.inf
    out = (1 - n) * math.log((1 - n) / (1 - n - theta0))
    if n > 0:
        out += n * math.log(n / (n + theta0))
    return out


def bernoulli_pair_kl(p: float, q: float) -> float:
    """D(Ber(p) || Ber(q)) for arbitrary p, q in [0, 1]."""
    out = 0.0
    for a, b in ((p, q), (1 - p, 1 - q)):
        if a > 0:
            if b <= 0:
                return math.inf
            out += a * math.log(a / b)
    return out


def qsp_composite_exponent(
    theta0: float, delta: float, mu_eps: float = 0.0, sigma_eps: float = 0.0
) -> float:
    """Approximate composite error exponent after DME-QSP filtering.

    theta0 + (delta + mu + sigma) log((delta + mu)/theta0) - sigma, valid for
    sigma << delta + mu << theta0. Outside that ordering the value is still
    returned but an :class:`AsymptoticRegimeWarning` is issued.
    """
    if theta0 <= 0 or delta < 0 or mu_eps < 0 or sigma_eps < 0:
        raise ValueError("theta0 must be positive; delta, mu_eps, sigma_eps nonnegative")
    bg = delta + mu_eps
    ordered = (sigma_eps < bg or sigma_eps == 0.0) and bg < theta0
    if not ordered:
        warnings.warn(
            "asymptotic regime violated: need sigma_eps < delta + mu_eps < theta0",
            AsymptoticRegimeWarning,
            stacklevel=2,
        )
    log_term = 0.0 if bg + sigma_eps == 0 else (bg + sigma_eps) * math.log(bg / theta0)
    return theta0 + log_term - sigma_eps


def composite_bernoulli_infimum(
    theta0: float,
    background_lo: float,
    background_hi: float,
    grid: int = 201,
) -> float:
    """inf D(Ber(b0) || Ber(b1 + theta0)) over backgrounds b0, b1 in [lo, hi].

    Grid search; the exact composite counterpart of
    :func:`qsp_composite_exponent`.
    """
    if not 0 <= background_lo <= background_hi or background_hi + theta0 > 1:
        raise ValueError("need 0 <= lo <= hi and hi + theta0 <= 1")
    bs = np.linspace(background_lo, background_hi, grid)
    best = math.inf
    for b0 in bs:
        for b1 in bs:
            best = min(best, bernoulli_pair_kl(b0, b1 + theta0))
    return best


def snr_bound(n: float, theta0: float, m: int) -> float:
    """Cramer-Rao bound theta0 sqrt(M / ((n + theta0)(1 - n - theta0)))."""
    if n < 0 or theta0 < 0 or n + theta0 >= 1 or m < 0:
        raise ValueError("need 0 <= n, 0 <= theta0, n + theta0 < 1 and M >= 0")
    if theta0 == 0 or m == 0:
        return 0.0
    return theta0 * math.sqrt(m / ((n + theta0) * (1 - n - theta0)))


# Asymptotic sample complexities. They are known only up to constants, so
# every formula carries a user-supplied prefactor.
_FORMULAS: dict[str, tuple[tuple[str, ...], Callable[..., float]]] = {
    "lower_bound": (("theta0", "beta"), lambda theta0, beta: math.log(1 / beta) / theta0),
    "tomography": (
        ("theta0", "beta", "r", "d"),
        lambda theta0, beta, r, d: r * d * math.log(1 / beta) / theta0**2,
    ),
    "rank_wss": (
        ("theta0", "beta", "r_n"),
        lambda theta0, beta, r_n: r_n**2 * math.log(1 / beta) / theta0,
    ),
    "purity_wss": (("theta0", "beta"), lambda theta0, beta: math.log(1 / beta) / theta0),
    "gap_wss": (
        ("theta0", "beta", "r", "lambda_gap"),
        lambda theta0, beta, r, lambda_gap: r**2
        * math.log(1 / beta)
        / min(theta0**2, lambda_gap**2),
    ),
    "gap_hybrid": (
        ("theta0", "beta", "r", "r_n", "lambda_gap"),
        lambda theta0, beta, r, r_n, lambda_gap: r**2 * math.log(1 / beta) / lambda_gap**2
        + r_n**2 * math.log(1 / beta) / theta0,
    ),
    "dme_qsp": (
        ("theta0", "beta", "delta", "lambda_gap", "epsilon"),
        lambda theta0, beta, delta, lambda_gap, epsilon: math.log(1 / delta) ** 2
        * math.log(1 / beta)
        / (lambda_gap**2 * epsilon * theta0),
    ),
}

FORMULAS = tuple(_FORMULAS)
_UNIT_INTERVAL = {"theta0", "beta", "delta"}


@dataclass(frozen=True)
class ComplexityQuery:
    formula: str
    params: Mapping[str, float] = field(default_factory=dict)
    constant: float = 1.0

    def __post_init__(self):
        if self.formula not in _FORMULAS:
            raise ValueError(f"unknown formula {self.formula!r}; choose from {FORMULAS}")
        required, _ = _FORMULAS[self.formula]
        missing = [k for k in required if k not in self.params]
        if missing:
            raise ValueError(f"formula {self.formula!r} is missing parameters: {missing}")
        for k in required:
            v = self.params[k]
            if not v > 0:
                raise ValueError(f"parameter {k} must be positive, got {v}")
            if k in _UNIT_INTERVAL and not v < 1:
                raise ValueError(f"parameter {k} must lie in (0, 1), got {v}")
        if not self.constant > 0:
            raise ValueError("constant prefactor must be positive")


def sample_complexity(query: ComplexityQuery) -> float:
    """Evaluate one row of the sample-complexity table.

    The table only fixes scaling; the absolute constant is the query's
    ``constant`` (1 by default).
    """
    required, fn = _FORMULAS[query.formula]
    return query.constant * fn(**{k: float(query.params[k]) for k in required})
