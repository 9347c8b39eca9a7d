"""Eigenvalue-filter simulation of DME-QSP spectral gap testing.

DME-QSP is simulated at the level of the filter pair (f, g) acting on the
eigenvalues of rho(theta): an eigenvector with eigenvalue lam ends up with
ancilla amplitude g(lam * x) on |1>. Only the diagonal flag statistics are
produced; coherences between ancilla outcomes are never represented.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import erf
from scipy.stats import binom

from .statemodel import SensingScenario

GRID = 4096


class FilterMismatch(ValueError):
    """State eigenvalues fall inside the filter's declared gap."""


@dataclass(frozen=True, eq=False)
class FilterSpec:
    """Step filter in eigenvalue space.

    ``g_sq`` (probability of flagging an eigenvalue as signal) is close to 1
    for eigenvalues at or below ``gap_lo`` and close to 0 at or above
    ``gap_hi``. ``delta`` is the worst deviation outside the gap; ``x`` the
    DME evolution parameter that maps eigenvalue lam to y = lam * x.
    """

    mode: str
    threshold: float
    delta: float
    x: float
    gap_lo: float
    gap_hi: float
    degree: int | None = None
    coefficients: np.ndarray | None = field(default=None, repr=False)
    epsilon: float = 0.0
    kappa: float | None = None

    def g_sq(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        if self.mode == "ideal":
            return np.where(lam <= self.threshold, 1.0 - self.delta, self.delta)
        y = lam * self.x
        k = np.arange(self.coefficients.size)
        vals = np.cos(np.multiply.outer(y, k)) @ self.coefficients
        return np.clip(vals, 0.0, 1.0)

    def f_sq(self, lam) -> np.ndarray:
        return 1.0 - self.g_sq(lam)

    @property
    def effective(self) -> bool:
        return self.delta < 0.5


def build_ideal_filter(theta0: float, lambda_gap: float, delta: float) -> FilterSpec:
    """Piecewise-constant step with failure ``delta`` on both sides of the gap."""
    if not 0.0 <= delta < 0.5:
        raise ValueError(f"delta must lie in [0, 1/2), got {delta}")
    if lambda_gap <= 0:
        raise ValueError("lambda_gap must be positive")
    if not 0.0 < theta0 < 1.0:
        raise ValueError("theta0 must lie in (0, 1)")
    return FilterSpec(
        mode="ideal",
        threshold=theta0 + lambda_gap / 2,
        delta=delta,
        x=1.0,
        gap_lo=theta0,
        gap_hi=theta0 + lambda_gap,
    )


def _box_target(y: np.ndarray, centre: float, kappa: float) -> np.ndarray:
    # erf-smoothed indicator of |y| < centre, even in y
    return 0.5 * (erf(kappa * (y + centre)) - erf(kappa * (y - centre)))


def _fit_cosine(degree: int, centre: float, kappa: float) -> np.ndarray:
    y = np.linspace(0.0, np.pi, GRID)
    basis = np.cos(np.multiply.outer(y, np.arange(degree + 1)))
    coef, *_ = np.linalg.lstsq(basis, _box_target(y, centre, kappa), rcond=None)
    return coef


def _filter_error(coef: np.ndarray, x: float, lam, gap_lo: float) -> np.ndarray:
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    vals = np.clip(np.cos(np.multiply.outer(lam * x, np.arange(coef.size))) @ coef, 0, 1)
    return np.abs(vals - (lam <= gap_lo))


def _achieved_delta(coef: np.ndarray, x: float, gap_lo: float, gap_hi: float) -> float:
    """Supremum of the step error outside the gap: grid scan, then local refinement."""
    # beyond y = pi the even cosine series repeats, so eigenvalues are checked up to there
    top = min(1.0, np.pi / x)
    lam = np.linspace(0.0, top, GRID)
    lam = np.union1d(lam[(lam <= gap_lo) | (lam >= gap_hi)], [gap_lo, gap_hi])
    lam = lam[lam <= top]
    err = _filter_error(coef, x, lam, gap_lo)
    best = float(err.max())
    step = top / (GRID - 1)
    for i in np.argsort(err)[-8:]:
        centre = lam[i]
        lo, hi = max(0.0, centre - step), min(top, centre + step)
        # stay on one side of the gap
        if centre <= gap_lo:
            hi = min(hi, gap_lo)
        else:
            lo = max(lo, gap_hi)
        if hi <= lo:
            continue
        res = minimize_scalar(
            lambda t: -_filter_error(coef, x, t, gap_lo)[0],
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-12},
        )
        best = max(best, -float(res.fun))
    return best


def build_poly_filter(
    lambda_gap: float,
    x: float,
    degree: int,
    theta0: float = 0.0,
) -> FilterSpec:
    """Trigonometric-polynomial approximation of the step.

    The target is an erf-smoothed box in y = lam * x, fitted by least squares
    with a cosine series of the given degree on [0, pi]. The erf sharpness is
    chosen to balance its own tail at the gap edges against the truncation
    error of the series. The reported ``delta`` is the achieved worst-case
    error outside the gap on eigenvalues in [0, 1]; ``epsilon`` is the
    trace-distance estimate log(1/delta) * x / lambda_gap.
    """
    if degree < 1:
        raise ValueError("degree must be at least 1")
    width = lambda_gap * x
    if not 0.0 < width < np.pi / 2:
        raise ValueError(f"need lambda_gap * x in (0, pi/2), got {width}")
    if theta0 < 0 or theta0 + lambda_gap > 1:
        raise ValueError("need theta0 >= 0 and theta0 + lambda_gap <= 1")
    gap_lo, gap_hi = theta0, theta0 + lambda_gap
    centre = (gap_lo + gap_hi) / 2 * x

    best = None
    for scale in (0.5, 0.7, 1.0, 1.4, 2.0):
        kappa = scale * math.sqrt(degree / width)
        coef = _fit_cosine(degree, centre, kappa)
        achieved = _achieved_delta(coef, x, gap_lo, gap_hi)
        if best is None or achieved < best[0]:
            best = (achieved, coef, kappa)
    achieved, coef, kappa = best
    coef.setflags(write=False)
    eps = math.log(1 / achieved) * x / lambda_gap if 0 < achieved < 1 else math.inf
    return FilterSpec(
        mode="polynomial",
        threshold=(gap_lo + gap_hi) / 2,
        delta=achieved,
        x=x,
        gap_lo=gap_lo,
        gap_hi=gap_hi,
        degree=degree,
        coefficients=coef,
        epsilon=eps,
        kappa=kappa,
    )


def required_degree(
    lambda_gap: float, x: float, delta: float, theta0: float = 0.0, max_degree: int = 4096
) -> int:
    """Smallest degree whose polynomial filter achieves error <= delta."""
    lo, hi = 1, 1
    while build_poly_filter(lambda_gap, x, hi, theta0).delta > delta:
        lo = hi + 1
        hi *= 2
        if hi > max_degree:
            raise ValueError(f"delta={delta} not reached below degree {max_degree}")
    while lo < hi:
        mid = (lo + hi) // 2
        if build_poly_filter(lambda_gap, x, mid, theta0).delta <= delta:
            hi = mid
        else:
            lo = mid + 1
    return hi


def apply_qsp_channel(
    scenario: SensingScenario, theta: float, filt: FilterSpec, tol: float = 1e-9
) -> float:
    """Probability of the ancilla flag |1> for the state rho(theta).

    p = sum_j lam_j |g(lam_j x)|^2 over the eigenvalues of rho(theta).
    """
    if not filt.effective:
        raise ValueError("filter ineffective (achieved delta >= 1/2)")
    if not scenario.is_orthogonal():
        raise ValueError("scenario must have orthogonal noise and signal (block diagonal)")
    lam = np.linalg.eigvalsh(scenario.state(theta).entries)
    lam = lam[lam > scenario.rank_tol]
    inside = (lam > filt.gap_lo + tol) & (lam < filt.gap_hi - tol)
    if inside.any():
        raise FilterMismatch(
            f"eigenvalues {lam[inside]} fall inside the filter gap ({filt.gap_lo}, {filt.gap_hi})"
        )
    p = float(np.dot(lam, filt.g_sq(lam)))
    return min(max(p, 0.0), 1.0)


@dataclass(frozen=True)
class BernoulliRun:
    p_true: float
    m_ber: int
    successes: int
    seed: int

    def __post_init__(self):
        if not 0 <= self.successes <= self.m_ber:
            raise ValueError("successes must lie in [0, m_ber]")


def sample_flag_counts(p: float, m_ber: int, seed: int) -> BernoulliRun:
    """Binomial number of flagged rounds out of ``m_ber``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if m_ber < 0:
        raise ValueError("m_ber must be nonnegative")
    rng = np.random.default_rng(seed)
    return BernoulliRun(p, m_ber, int(rng.binomial(m_ber, p)), seed)


def flag_probabilities(delta: float, theta0: float) -> tuple[float, float]:
    """Flag probabilities (H0, H1) for an ideal filter: delta and (1-2 delta) theta0 + delta."""
    return delta, (1 - 2 * delta) * theta0 + delta


def midpoint_threshold(m_ber: int, p0: float, p1: float) -> float:
    """Count threshold halfway between the expected counts under H0 and H1."""
    return 0.5 * m_ber * (p0 + p1)


def neyman_pearson_threshold(m_ber: int, p0: float, alpha_cap: float) -> int:
    """Smallest count c with P(Bin(m_ber, p0) > c) <= alpha_cap; reject H0 when count > c."""
    if not 0 < alpha_cap < 1:
        raise ValueError("alpha_cap must lie in (0, 1)")
    return int(binom.ppf(1.0 - alpha_cap, m_ber, p0))


def decide_counts(
    successes,
    m_ber: int,
    p0: float,
    p1: float,
    rule: str = "midpoint",
    alpha_cap: float = 0.1,
):
    """Vectorized decision on flag counts; returns True where H1 is declared.

    ``midpoint`` declares H1 when the count exceeds the midpoint of the
    expected counts. ``neyman_pearson`` fixes the type-1 error at or below
    ``alpha_cap`` under background ``p0`` (the likelihood-ratio test for a
    Bernoulli family is a count threshold).
    """
    successes = np.asarray(successes)
    if rule == "midpoint":
        return successes > midpoint_threshold(m_ber, p0, p1)
    if rule == "neyman_pearson":
        return successes > neyman_pearson_threshold(m_ber, p0, alpha_cap)
    raise ValueError(f"unknown decision rule {rule!r}")


@dataclass(frozen=True)
class QspBudget:
    m_qsp: float
    epsilon: float
    m_ber: float
    m_tot: float


def qsp_budget(delta: float, lambda_gap: float, x: float, beta: float, theta0: float) -> QspBudget:
    """Copy budget of DME-QSP with unit constants.

    epsilon = log(1/delta) x / lambda_gap, M_qsp = log(1/delta)^2 / (lambda_gap^2 epsilon),
    M_ber = log(1/beta) / theta0, M_tot = M_ber * M_qsp.
    """
    for name, v in (("delta", delta), ("beta", beta), ("theta0", theta0)):
        if not 0 < v < 1:
            raise ValueError(f"{name} must lie in (0, 1), got {v}")
    if lambda_gap <= 0 or x <= 0:
        raise ValueError("lambda_gap and x must be positive")
    ld = math.log(1 / delta)
    eps = ld * x / lambda_gap
    m_qsp = ld**2 / (lambda_gap**2 * eps)
    m_ber = math.log(1 / beta) / theta0
    return QspBudget(m_qsp=m_qsp, epsilon=eps, m_ber=m_ber, m_tot=m_ber * m_qsp)
