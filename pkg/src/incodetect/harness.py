"""Monte Carlo error estimation, sample-complexity search and scaling fits.

Every estimate is a pure function of its inputs and the master seed. Trials
run in fixed-size chunks and each chunk draws from its own generator, seeded
from (master seed, hypothesis, scenario index, chunk index), so aggregates do
not depend on the order in which chunks are evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy.stats import linregress, norm

from . import dmeqsp
from .divergence import kl_divergence
from .schurwss import sample_rows
from .statemodel import DensityMatrix, SensingScenario, Spectrum, haar_unitaries

STRATEGIES = ("rank_wss", "purity_wss", "gap_wss", "hybrid_wss", "dme_qsp", "naive_tomography")
CHUNK = 2048
M_CAP = 10**7
TOMOGRAPHY_MAX_DIM = 8
# three phase-1 diagrams of floor(M/6) copies need M >= 6
MIN_COPIES = {"hybrid_wss": 6}


class InfeasibleStrategy(ValueError):
    """Strategy cannot be run on the given scenario."""


class TargetUnreachable(RuntimeError):
    """No copy budget up to the desk-scale cap meets the error targets."""


@dataclass(frozen=True)
class ErrorEstimate:
    alpha_hat: float
    beta_hat: float
    alpha_ci: tuple[float, float]
    beta_ci: tuple[float, float]
    trials: int
    m_copies: int
    seed: int
    family_size: int = 1


@dataclass(frozen=True)
class ScalingFit:
    points: tuple[tuple[float, float], ...]
    slope: float
    intercept: float
    r_squared: float

    def predict(self, control: float) -> float:
        return math.exp(self.intercept) * control**self.slope


@dataclass(frozen=True)
class ChernoffPoint:
    m: int
    exponent_hat: float
    beta_hat: float
    beta_ci_width: float
    exponent_ci_width: float
    lower_bound: bool
    kl_bound: float


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("no trials")
    if not 0 <= successes <= trials:
        raise ValueError("successes must lie in [0, trials]")
    z = float(norm.ppf(0.5 + confidence / 2))
    phat = successes / trials
    denom = 1 + z * z / trials
    centre = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi


def _check_strategy(strategy: str, scenario: SensingScenario, opts: dict):
    if strategy not in STRATEGIES:
        raise InfeasibleStrategy(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    if strategy == "purity_wss" and scenario.r_n != 1:
        raise InfeasibleStrategy(f"purity_wss needs a pure noise state, got r_n={scenario.r_n}")
    if strategy in ("gap_wss", "hybrid_wss", "dme_qsp") and scenario.lambda_gap is None:
        raise InfeasibleStrategy(f"{strategy} needs a spectral gap lambda_gap on the scenario")
    if strategy == "dme_qsp" and not scenario.is_orthogonal():
        raise InfeasibleStrategy("dme_qsp needs orthogonal noise and signal supports")
    if strategy == "naive_tomography" and scenario.dim > TOMOGRAPHY_MAX_DIM:
        raise InfeasibleStrategy(
            f"naive_tomography is limited to d <= {TOMOGRAPHY_MAX_DIM}, got d={scenario.dim}"
        )
    unknown = set(opts) - {"filter", "delta", "rule", "alpha_cap", "band"}
    if unknown:
        raise InfeasibleStrategy(f"unknown strategy options {sorted(unknown)}")


def _band_hits(rows: np.ndarray, m: int, theta0: float, lambda_gap: float, band) -> np.ndarray:
    lo = band[0] * theta0
    hi = theta0 + band[1] * lambda_gap
    est = rows / m
    return np.any((est >= lo) & (est < hi) & (rows > 0), axis=1)


def _noise_rank(rows: np.ndarray, m: int, theta0: float, lambda_gap: float) -> np.ndarray:
    return np.sum(rows / m >= theta0 + lambda_gap / 2, axis=1)


def _hybrid(spectrum: Spectrum, m: int, n: int, rng, theta0: float, lambda_gap: float):
    # phase 1: three diagrams of floor(M/6) copies vote on the noise rank;
    # with three votes the median is the strict majority when one exists
    # and the fallback otherwise
    m1 = m // 6
    if m1 < 1:
        raise InfeasibleStrategy("hybrid_wss needs M >= 6")
    m2 = m - 3 * m1
    phase1 = sample_rows(spectrum, m1, 3 * n, rng)
    votes = _noise_rank(phase1, m1, theta0, lambda_gap).reshape(n, 3)
    r_hat = np.median(votes, axis=1)
    phase2 = sample_rows(spectrum, m2, n, rng)
    return np.count_nonzero(phase2, axis=1) > r_hat


def _qsp_setup(scenario: SensingScenario, opts: dict):
    filt = opts.get("filter") or dmeqsp.build_ideal_filter(
        scenario.theta0, scenario.lambda_gap, opts.get("delta", 1e-3)
    )
    p0, p1 = dmeqsp.flag_probabilities(filt.delta, scenario.theta0)
    return filt, p0, p1


def tomography_estimates(
    state: DensityMatrix, m_copies: int, trials: int, seed: int
) -> Iterator[np.ndarray]:
    """Stream of single-copy random-basis reconstructions of ``state``.

    Each copy is measured in a fresh Haar-random basis; the outcome vector u
    contributes the unbiased estimator (d+1)|u><u| - I. Deterministic in seed.
    """
    if state.dim > TOMOGRAPHY_MAX_DIM:
        raise InfeasibleStrategy(f"tomography is limited to d <= {TOMOGRAPHY_MAX_DIM}")
    d = state.dim
    rng = np.random.default_rng(seed)
    rho = state.entries
    for _ in range(trials):
        us = haar_unitaries(m_copies, d, rng)
        probs = np.einsum("mik,ij,mjk->mk", us.conj(), rho, us).real
        probs = np.clip(probs, 0, None)
        probs /= probs.sum(axis=1, keepdims=True)
        cum = probs.cumsum(axis=1)
        k = np.minimum((rng.random((m_copies, 1)) > cum).sum(axis=1), d - 1)
        vecs = us[np.arange(m_copies), :, k]
        avg = np.einsum("mi,mj->ij", vecs, vecs.conj()) / m_copies
        yield (d + 1) * avg - np.eye(d)


def project_to_state(estimate: np.ndarray) -> np.ndarray:
    """Closest density matrix in Frobenius norm (eigenvalues projected onto the simplex)."""
    herm = (estimate + estimate.conj().T) / 2
    w, v = np.linalg.eigh(herm)
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - 1
    idx = np.arange(1, u.size + 1)
    k = idx[u - css / idx > 0][-1]
    shifted = np.clip(w - css[k - 1] / k, 0, None)
    return (v * shifted) @ v.conj().T


def _tomography_decisions(state, scenario, m, n, seed) -> np.ndarray:
    out = np.empty(n, dtype=bool)
    for i, est in enumerate(tomography_estimates(state, m, n, seed)):
        w = np.sort(np.linalg.eigvalsh(project_to_state(est)))[::-1]
        out[i] = w[scenario.r_n :].sum() >= scenario.theta0 / 2
    return out


def _decisions(strategy, scenario, theta, m, n, rng, opts) -> np.ndarray:
    """Boolean array, True where H1 is declared, for ``n`` trials on rho(theta)."""
    state = scenario.state(theta)
    if strategy == "naive_tomography":
        return _tomography_decisions(state, scenario, m, n, int(rng.integers(2**63)))
    if strategy == "dme_qsp":
        filt, p0, p1 = _qsp_setup(scenario, opts)
        p = dmeqsp.apply_qsp_channel(scenario, theta, filt)
        counts = rng.binomial(m, p, size=n)
        return dmeqsp.decide_counts(
            counts, m, p0, p1, opts.get("rule", "midpoint"), opts.get("alpha_cap", 0.1)
        )
    spectrum = state.spectrum(scenario.rank_tol)
    theta0, gap = scenario.theta0, scenario.lambda_gap
    if strategy == "hybrid_wss":
        return _hybrid(spectrum, m, n, rng, theta0, gap)
    rows = sample_rows(spectrum, m, n, rng)
    if strategy == "rank_wss":
        return np.count_nonzero(rows, axis=1) > scenario.r_n
    if strategy == "purity_wss":
        return np.count_nonzero(rows, axis=1) > 1
    return _band_hits(rows, m, theta0, gap, opts.get("band", (0.5, 0.5)))


def _count_h1(strategy, scenario, theta, m, trials, seed, hyp, index, opts) -> int:
    total = 0
    for chunk, start in enumerate(range(0, trials, CHUNK)):
        n = min(CHUNK, trials - start)
        ss = np.random.SeedSequence([seed, hyp, index, chunk])
        rng = np.random.default_rng(ss)
        total += int(np.count_nonzero(_decisions(strategy, scenario, theta, m, n, rng, opts)))
    return total


def estimate_errors(
    scenarios: SensingScenario | Sequence[SensingScenario],
    strategy: str,
    m_copies: int,
    trials: int,
    seed: int,
    **opts,
) -> ErrorEstimate:
    """Worst-case type-1 and type-2 error rates over a scenario family.

    Under H0 each scenario is prepared as its noise state, under H1 as
    rho(theta0). The reported rates are the maxima over the family, each with
    a 95% Wilson interval. For ``dme_qsp``, ``m_copies`` counts Bernoulli
    rounds (each round consumes one filter application).
    """
    if trials <= 0:
        raise ValueError("no trials")
    if m_copies < 1:
        raise ValueError("m_copies must be at least 1")
    family = [scenarios] if isinstance(scenarios, SensingScenario) else list(scenarios)
    if not family:
        raise ValueError("empty scenario family")
    for scn in family:
        _check_strategy(strategy, scn, opts)
    alpha_counts, beta_counts = [], []
    for i, scn in enumerate(family):
        alpha_counts.append(_count_h1(strategy, scn, 0.0, m_copies, trials, seed, 0, i, opts))
        hits = _count_h1(strategy, scn, scn.theta0, m_copies, trials, seed, 1, i, opts)
        beta_counts.append(trials - hits)
    a, b = max(alpha_counts), max(beta_counts)
    return ErrorEstimate(
        alpha_hat=a / trials,
        beta_hat=b / trials,
        alpha_ci=wilson_interval(a, trials),
        beta_ci=wilson_interval(b, trials),
        trials=trials,
        m_copies=m_copies,
        seed=seed,
        family_size=len(family),
    )


def naive_tomography_baseline(
    scenario: SensingScenario, m_copies: int, trials: int, seed: int
) -> ErrorEstimate:
    """Single-copy random-basis tomography followed by a rank-r_n threshold at theta0/2."""
    return estimate_errors(scenario, "naive_tomography", m_copies, trials, seed)


def find_sample_complexity(
    scenarios,
    strategy: str,
    target_beta: float,
    alpha_cap: float,
    trials: int,
    seed: int,
    m_start: int = 1,
    resolution: float = 0.05,
    m_cap: int | None = None,
    **opts,
) -> int:
    """Smallest tested copy count with beta_hat <= target_beta and alpha_hat <= alpha_cap.

    Doubles from ``m_start`` until the targets are met, then bisects the last
    bracket down to ``resolution`` relative width. Every rung reuses the same
    master seed.
    """
    if not 0 < target_beta < 1:
        raise ValueError("target_beta must lie in (0, 1)")
    if not 0 <= alpha_cap < 1:
        raise ValueError("alpha_cap must lie in [0, 1)")
    m_cap = M_CAP if m_cap is None else m_cap
    cache: dict[int, bool] = {}

    def ok(m: int) -> bool:
        if m not in cache:
            est = estimate_errors(scenarios, strategy, m, trials, seed, **opts)
            cache[m] = est.beta_hat <= target_beta and est.alpha_hat <= alpha_cap
        return cache[m]

    lo, hi = 0, max(1, m_start, MIN_COPIES.get(strategy, 1))
    while not ok(hi):
        lo = hi
        hi *= 2
        if hi > m_cap:
            raise TargetUnreachable(
                f"target unreachable at desk scale (M > {m_cap:.0e}) for {strategy}"
            )
    while hi - lo > 1 and (hi - lo) > resolution * hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def fit_scaling(points: Sequence[tuple[float, float]]) -> ScalingFit:
    """Ordinary least squares of log(m_star) on log(control)."""
    pts = tuple((float(c), float(m)) for c, m in points)
    if len(pts) < 3:
        raise ValueError("need at least 3 points")
    controls = np.array([c for c, _ in pts])
    values = np.array([m for _, m in pts])
    if np.any(controls <= 0) or np.any(values <= 0):
        raise ValueError("points must be positive for a log-log fit")
    if controls.max() / controls.min() < 4:
        raise ValueError("degenerate spread: controls must span at least a factor of 4")
    res = linregress(np.log(controls), np.log(values))
    return ScalingFit(pts, float(res.slope), float(res.intercept), float(res.rvalue**2))


def chernoff_gap(
    scenarios,
    strategy: str,
    m_ladder: Sequence[int],
    trials: int,
    seed: int,
    **opts,
) -> list[ChernoffPoint]:
    """Empirical error exponent -log(beta_hat)/M per rung of ``m_ladder``.

    Rungs with beta_hat = 0 use the Wilson upper bound instead and are
    flagged as lower bounds on the exponent. Each point carries the quantum
    relative entropy D(rho_n || rho(theta0)), minimised over the family, for
    comparison.
    """
    if not m_ladder or any(m < 1 for m in m_ladder):
        raise ValueError("ladder must be a nonempty list of positive integers")
    family = [scenarios] if isinstance(scenarios, SensingScenario) else list(scenarios)
    bounds = [kl_divergence(s.rho_n, s.state()) for s in family]
    kl = min(float(b) for b in bounds)
    out = []
    for m in m_ladder:
        est = estimate_errors(family, strategy, m, trials, seed, **opts)
        lo, hi = est.beta_ci
        lower = est.beta_hat == 0
        beta = hi if lower else est.beta_hat
        exponent = -math.log(beta) / m if beta < 1 else 0.0
        spread = math.log(hi / lo) / m if lo > 0 else math.inf
        out.append(ChernoffPoint(m, exponent, est.beta_hat, hi - lo, spread, lower, kl))
    return out
