"""Acceptance suite: one test per criterion, each at its stated tolerance and time limit.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary lists
one PASS/FAIL line per criterion.
"""

import itertools
import math
import time

import numpy as np
import pytest

from incodetect.divergence import (
    bernoulli_kl,
    kl_divergence,
    kl_first_order,
    kmb_fisher_information,
    qsp_composite_exponent,
)
from incodetect.dmeqsp import apply_qsp_channel, build_ideal_filter, build_poly_filter
from incodetect.harness import chernoff_gap, estimate_errors, find_sample_complexity, fit_scaling
from incodetect.schurwss import random_povm_element, sample_rows, schur_weyl_probabilities, twirl
from incodetect.statemodel import (
    DensityMatrix,
    SensingScenario,
    Spectrum,
    depolarize,
    random_density_matrix,
    random_scenario,
    support_extending_scenario,
)

FAMILY = range(5)


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


@pytest.mark.criterion(1)
def test_first_order_expansion(criterion):
    sweep = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)
    worst = 0.0
    with Timer() as t:
        for seed in range(50):
            d = 2 + seed % 7
            r_n = 1 + seed % (d - 1)
            base = support_extending_scenario(d, r_n, 0.1, seed=seed)
            residuals = []
            for v in sweep:
                scn = SensingScenario(base.rho_n, base.rho_s, v)
                exact = kl_divergence(scn.rho_n, scn.state()).value
                residuals.append(abs(exact - kl_first_order(scn, v)) / v**2)
            worst = max(worst, max(residuals) / min(residuals))
    criterion(
        worst < 4 and t.elapsed < 10,
        f"first-order residual/theta^2 spread: worst ratio {worst:.3f} (< 4), {t.elapsed:.1f}s",
    )


@pytest.mark.criterion(2)
def test_support_preserving_quadratic(criterion):
    theta = 1e-3
    worst = 0.0
    rng = np.random.default_rng(2024)
    with Timer() as t:
        for i in range(50):
            d = 2 + i % 2
            # keep the spectrum away from zero so theta stays in the quadratic regime
            rho_n = depolarize(random_density_matrix(d, rng), 0.2)
            rho_s = random_density_matrix(d, rng)
            delta = rho_s.entries - rho_n.entries
            perturbed = DensityMatrix((1 - theta) * rho_n.entries + theta * rho_s.entries)
            ratio = kl_divergence(rho_n, perturbed).value / theta**2
            half_fisher = 0.5 * kmb_fisher_information(rho_n, delta)
            worst = max(worst, abs(ratio / half_fisher - 1))
    criterion(
        worst <= 0.05 and t.elapsed < 10,
        f"D/theta^2 vs KMB/2: worst relative error {worst:.2e} (<= 5%), {t.elapsed:.1f}s",
    )


def spectrum_grid():
    values = [round(0.1 * k, 1) for k in range(2, 9)]
    grid = []
    for rank in (2, 3):
        for combo in itertools.combinations_with_replacement(values, rank):
            if abs(sum(combo) - 1) < 1e-9:
                grid.append(tuple(sorted(combo, reverse=True)))
    return grid


@pytest.mark.criterion(3)
def test_schur_weyl_sampler(criterion):
    draws = 100_000
    rng = np.random.default_rng(0)
    worst_z, outcomes, misses = 0.0, 0, []
    grid = spectrum_grid()
    with Timer() as t:
        for values in grid:
            for m in range(1, 5):
                rows = sample_rows(Spectrum(np.array(values)), m, draws, rng)
                counts: dict[tuple, int] = {}
                for row in map(tuple, rows):
                    shape = tuple(int(x) for x in row if x)
                    counts[shape] = counts.get(shape, 0) + 1
                oracle = schur_weyl_probabilities(values, m)
                for shape in set(oracle) | set(counts):
                    p = oracle.get(shape, 0.0)
                    k = counts.get(shape, 0)
                    outcomes += 1
                    sd = math.sqrt(p * (1 - p) / draws)
                    if sd == 0:
                        z = 0.0 if k / draws == p else math.inf
                    else:
                        z = abs(k / draws - p) / sd
                    worst_z = max(worst_z, z)
                    if z > 3:
                        misses.append((values, m, shape, round(z, 2)))
    criterion(
        not misses and t.elapsed < 60,
        f"Schur-Weyl sampler: {len(grid)} spectra x M<=4, {outcomes} outcomes, "
        f"max |z| {worst_z:.2f} (<= 3), misses {misses}, {t.elapsed:.1f}s",
    )


@pytest.mark.criterion(4)
def test_rank_one_sided(criterion):
    scn = random_scenario(6, 3, 1, 0.2, seed=0)
    with Timer() as t:
        est = estimate_errors(scn, "rank_wss", 30, 100_000, seed=4)
    criterion(
        est.alpha_hat == 0 and t.elapsed < 30,
        f"rank test alpha_hat {est.alpha_hat} over {est.trials} H0 trials, {t.elapsed:.1f}s",
    )


@pytest.mark.criterion(5)
def test_rank_purity_scaling(criterion):
    with Timer() as t:
        purity = []
        for theta0 in (0.05, 0.1, 0.2, 0.4):
            family = [random_scenario(4, 1, 1, theta0, seed=s) for s in FAMILY]
            purity.append((theta0, find_sample_complexity(family, "purity_wss", 0.1, 0.05, 2000, 0)))
        rank = []
        for r_n in (1, 2, 3):
            family = [random_scenario(6, r_n, 1, 0.2, lambda_gap=0.0, seed=s) for s in FAMILY]
            rank.append((r_n, find_sample_complexity(family, "rank_wss", 0.1, 0.05, 2000, 0)))
    slope_theta = fit_scaling(purity).slope
    # the rank ladder spans only a factor of 3, so the fit is done directly
    slope_rank = float(np.polyfit(np.log([r for r, _ in rank]), np.log([m for _, m in rank]), 1)[0])
    criterion(
        abs(slope_theta + 1) <= 0.25 and 1.2 <= slope_rank <= 2.8 and t.elapsed < 600,
        f"purity m* {[m for _, m in purity]} slope {slope_theta:.2f} (-1 +/- 0.25); "
        f"rank m* {[m for _, m in rank]} slope in r_n {slope_rank:.2f} ([1.2, 2.8]), {t.elapsed:.0f}s",
    )


@pytest.mark.criterion(6)
def test_spectral_gap_regimes(criterion):
    ladder = (0.02, 0.04, 0.08, 0.16)
    with Timer() as t:
        gap, hybrid = [], []
        for theta0 in ladder:
            family = [random_scenario(4, 1, 1, theta0, lambda_gap=0.4, seed=s) for s in FAMILY]
            gap.append((theta0, find_sample_complexity(family, "gap_wss", 0.1, 0.05, 1000, 0)))
            hybrid.append(
                (theta0, find_sample_complexity(family, "hybrid_wss", 0.1, 0.05, 1000, 0))
            )
    slope_gap = fit_scaling(gap).slope
    slope_hybrid = fit_scaling(hybrid).slope
    criterion(
        slope_gap <= -1.5 and abs(slope_hybrid + 1) <= 0.3 and t.elapsed < 900,
        f"gap m* {[m for _, m in gap]} slope {slope_gap:.2f} (<= -1.5); "
        f"hybrid m* {[m for _, m in hybrid]} slope {slope_hybrid:.2f} (-1 +/- 0.3), {t.elapsed:.0f}s",
    )


@pytest.mark.criterion(7)
def test_bernoulli_law(criterion):
    with Timer() as t:
        ideal_err = 0.0
        for seed, (theta0, delta) in enumerate(itertools.product((0.01, 0.05, 0.2), (0.0, 1e-3, 0.1))):
            scn = random_scenario(5, 2, 2, theta0, lambda_gap=0.2, seed=seed)
            filt = build_ideal_filter(theta0, 0.2, delta)
            for theta in np.linspace(0, theta0, 7):
                p = apply_qsp_channel(scn, theta, filt)
                ideal_err = max(ideal_err, abs(p - ((1 - 2 * delta) * theta + delta)))
        lam = np.linspace(0, 1, 1000)
        poly_excess = -math.inf
        for lambda_gap, x, degree, theta0 in ((0.3, 1.5, 40, 0.05), (0.2, 2.0, 24, 0.1), (0.4, 1.0, 30, 0.05)):
            filt = build_poly_filter(lambda_gap, x, degree, theta0)
            outside = (lam <= filt.gap_lo) | (lam >= filt.gap_hi)
            err = np.abs(filt.g_sq(lam[outside]) - (lam[outside] <= filt.gap_lo))
            poly_excess = max(poly_excess, float(err.max() - filt.delta))
            scn = random_scenario(4, 1, 2, theta0, lambda_gap=lambda_gap, seed=degree)
            for theta in np.linspace(0, theta0, 7):
                p = apply_qsp_channel(scn, theta, filt)
                ref = (1 - 2 * filt.delta) * theta + filt.delta
                poly_excess = max(poly_excess, abs(p - ref) - filt.delta)
    criterion(
        ideal_err <= 1e-12 and poly_excess <= 0 and t.elapsed < 5,
        f"ideal filter max error {ideal_err:.1e} (<= 1e-12); polynomial max (deviation - delta_hat) "
        f"{poly_excess:.2e} (<= 0), {t.elapsed:.1f}s",
    )


@pytest.mark.criterion(8)
def test_composite_exponent(criterion):
    theta0, delta = 0.05, 1e-3
    scn = random_scenario(4, 1, 1, theta0, lambda_gap=0.3, seed=1)
    target = qsp_composite_exponent(theta0, delta)
    with Timer() as t:
        points = chernoff_gap(
            scn, "dme_qsp", [120, 160, 200, 240], 2_000_000, seed=0,
            delta=delta, rule="neyman_pearson", alpha_cap=0.1,
        )
    ratios = [p.exponent_hat / target for p in points]
    within = all(0.5 <= r <= 1.0 for r in ratios)
    bounded = all(p.exponent_hat <= p.kl_bound + 3 * p.exponent_ci_width for p in points)
    criterion(
        within and bounded and t.elapsed < 300,
        f"exponent/composite {[round(r, 3) for r in ratios]} ([0.5, 1.0]), "
        f"target {target:.4f}, KL bound {points[0].kl_bound:.4f} respected: {bounded}, {t.elapsed:.0f}s",
    )


@pytest.mark.criterion(9)
def test_bernoulli_regimes(criterion):
    with Timer() as t:
        n, theta0 = 1e-4, 1e-2
        small = bernoulli_kl(n, theta0) / (theta0 + n * math.log(n / theta0)) - 1
        n, theta0 = 0.3, 1e-3
        large = bernoulli_kl(n, theta0) / (theta0**2 / (2 * n * (1 - n))) - 1
    criterion(
        abs(small) <= 0.05 and abs(large) <= 0.05 and t.elapsed < 1,
        f"Bernoulli KL relative errors {small:.2e}, {large:.2e} (<= 5%), {t.elapsed:.3f}s",
    )


@pytest.mark.criterion(10)
def test_twirl_structure(criterion):
    worst_res, worst_out = 0.0, 0.0
    with Timer() as t:
        for m, d in ((2, 2), (2, 3), (3, 2)):
            rng = np.random.default_rng(100 * m + d)
            for _ in range(20):
                res = twirl(random_povm_element(d**m, rng), m, d)
                worst_res = max(worst_res, res.residual)
                for c in res.coeffs.values():
                    worst_out = max(worst_out, -c, c - 1)
    criterion(
        worst_res <= 1e-8 and worst_out <= 1e-9 and t.elapsed < 30,
        f"twirl residual {worst_res:.1e} (<= 1e-8), coefficient overshoot {max(worst_out, 0):.1e} "
        f"(<= 1e-9), {t.elapsed:.1f}s",
    )


def depolarized_scenario(gamma, theta0, d=8):
    ket = np.zeros(d)
    ket[0] = 1
    sig = np.zeros(d)
    sig[1] = 1
    return SensingScenario(depolarize(DensityMatrix.pure(ket), gamma), DensityMatrix.pure(sig), theta0)


@pytest.mark.criterion(11)
def test_depolarizing_regimes(criterion):
    with Timer() as t:
        gamma, theta0 = 1e-5, 1e-2
        scn = depolarized_scenario(gamma, theta0)
        weak = kl_divergence(scn.rho_n, scn.state()).value
        weak_err = abs(weak / ((1 - gamma) * theta0 + 0.5 * theta0**2) - 1)
        ratios = []
        for theta0 in (1e-3, 5e-4):
            scn = depolarized_scenario(0.3, theta0)
            ratios.append(kl_divergence(scn.rho_n, scn.state()).value / theta0**2)
        spread = abs(ratios[0] / ratios[1] - 1)
    criterion(
        weak_err <= 0.1 and all(map(math.isfinite, ratios)) and spread <= 0.1 and t.elapsed < 5,
        f"weak noise relative error {weak_err:.2e} (<= 10%); strong noise D/theta^2 "
        f"{ratios[0]:.3f} vs {ratios[1]:.3f}, spread {spread:.2%} (<= 10%), {t.elapsed:.2f}s",
    )
