import math

import numpy as np
import pytest

from incodetect.harness import (
    InfeasibleStrategy,
    TargetUnreachable,
    chernoff_gap,
    estimate_errors,
    find_sample_complexity,
    fit_scaling,
    naive_tomography_baseline,
    project_to_state,
    tomography_estimates,
    wilson_interval,
)
from incodetect.statemodel import random_scenario


@pytest.fixture(scope="module")
def qubit():
    return random_scenario(2, 1, 1, 0.2, seed=0)


@pytest.fixture(scope="module")
def gapped():
    return random_scenario(4, 1, 1, 0.1, lambda_gap=0.4, seed=2)


class TestWilson:
    def test_contains_point(self):
        for k, n in [(0, 10), (3, 10), (10, 10), (57, 400)]:
            lo, hi = wilson_interval(k, n)
            assert 0 <= lo <= k / n <= hi <= 1

    def test_coverage(self):
        rng = np.random.default_rng(0)
        for p in (0.05, 0.3, 0.7):
            k = rng.binomial(200, p, size=2000)
            covered = [lo <= p <= hi for lo, hi in (wilson_interval(int(x), 200) for x in k)]
            assert np.mean(covered) >= 0.93

    def test_no_trials(self):
        with pytest.raises(ValueError, match="no trials"):
            wilson_interval(0, 0)


class TestEstimateErrors:
    def test_rank_zero_false_alarm(self, qubit):
        for m in (1, 5, 40):
            assert estimate_errors(qubit, "rank_wss", m, 3000, seed=m).alpha_hat == 0.0

    def test_purity_pinned(self, qubit):
        est = estimate_errors(qubit, "purity_wss", 500, 2000, seed=0)
        assert est.beta_hat < 0.05
        assert est.alpha_ci[0] <= est.alpha_hat <= est.alpha_ci[1]
        assert est.beta_ci[0] <= est.beta_hat <= est.beta_ci[1]

    def test_no_trials(self, qubit):
        with pytest.raises(ValueError, match="no trials"):
            estimate_errors(qubit, "rank_wss", 10, 0, seed=0)

    def test_reproducible(self, gapped):
        a = estimate_errors(gapped, "gap_wss", 40, 3000, seed=5)
        b = estimate_errors(gapped, "gap_wss", 40, 3000, seed=5)
        assert a == b

    def test_worst_case_over_family(self):
        strong = random_scenario(4, 1, 1, 0.3, seed=0)
        weak = random_scenario(4, 1, 1, 0.05, seed=1)
        joint = estimate_errors([strong, weak], "rank_wss", 20, 4000, seed=1)
        alone = estimate_errors([strong], "rank_wss", 20, 4000, seed=1)
        assert joint.family_size == 2
        # the first member draws identical streams in both runs
        assert joint.beta_hat >= alone.beta_hat
        assert joint.beta_hat == pytest.approx(0.95**19, abs=0.03)

    def test_infeasible(self):
        no_gap = random_scenario(4, 2, 1, 0.1, seed=0)
        with pytest.raises(InfeasibleStrategy, match="lambda_gap"):
            estimate_errors(no_gap, "gap_wss", 10, 10, seed=0)
        with pytest.raises(InfeasibleStrategy, match="pure noise"):
            estimate_errors(no_gap, "purity_wss", 10, 10, seed=0)
        with pytest.raises(InfeasibleStrategy, match="unknown strategy"):
            estimate_errors(no_gap, "magic", 10, 10, seed=0)

    def test_hybrid_runs(self, gapped):
        est = estimate_errors(gapped, "hybrid_wss", 120, 2000, seed=0)
        assert est.alpha_hat <= 0.05 and est.beta_hat <= 0.05

    def test_qsp_end_to_end(self):
        theta0, beta = 0.05, 0.1
        scn = random_scenario(4, 1, 1, theta0, lambda_gap=0.3, seed=1)
        m_ber = round(20 * math.log(1 / beta) / theta0)
        est = estimate_errors(scn, "dme_qsp", m_ber, 500, seed=0, delta=1e-3)
        assert est.beta_hat <= 0.1 and est.alpha_hat <= 0.1


class TestSampleComplexity:
    def test_monotone_in_signal(self):
        weak = random_scenario(3, 1, 1, 0.1, seed=4)
        strong = random_scenario(3, 1, 1, 0.2, seed=4)
        m_weak = find_sample_complexity(weak, "purity_wss", 0.1, 0.1, 2000, seed=0)
        m_strong = find_sample_complexity(strong, "purity_wss", 0.1, 0.1, 2000, seed=0)
        assert m_strong <= m_weak

    def test_monotone_in_target(self, qubit):
        loose = find_sample_complexity(qubit, "purity_wss", 0.5, 0.1, 2000, seed=0)
        tight = find_sample_complexity(qubit, "purity_wss", 0.1, 0.1, 2000, seed=0)
        assert loose <= tight

    def test_purity_scaling(self):
        pts = []
        for theta0 in (0.05, 0.1, 0.2):
            scn = random_scenario(3, 1, 1, theta0, seed=0)
            pts.append((theta0, find_sample_complexity(scn, "purity_wss", 0.1, 0.1, 2000, seed=0)))
        assert pts[0][1] > pts[1][1] > pts[2][1]
        assert fit_scaling(pts).slope == pytest.approx(-1, abs=0.25)

    def test_unreachable(self, qubit):
        with pytest.raises(TargetUnreachable, match="unreachable at desk scale"):
            find_sample_complexity(qubit, "purity_wss", 1e-3, 0.1, 200, seed=0, m_cap=8)

    def test_bad_target(self, qubit):
        with pytest.raises(ValueError):
            find_sample_complexity(qubit, "purity_wss", 1.0, 0.1, 10, seed=0)


class TestFit:
    @pytest.mark.parametrize("power", [1, 2])
    def test_exact(self, power):
        pts = [(t, 3.0 / t**power) for t in (0.01, 0.02, 0.05, 0.1)]
        fit = fit_scaling(pts)
        assert fit.slope == pytest.approx(-power, abs=1e-9)
        assert fit.r_squared == pytest.approx(1.0)

    def test_degenerate(self):
        with pytest.raises(ValueError, match="degenerate"):
            fit_scaling([(1, 1), (1.5, 2), (2, 3)])
        with pytest.raises(ValueError):
            fit_scaling([(1, 1), (10, 2)])


class TestChernoff:
    def test_bounded_by_divergence(self, qubit):
        pts = chernoff_gap(qubit, "purity_wss", [2, 4, 8, 16], 4000, seed=0)
        for p in pts:
            assert p.exponent_hat <= p.kl_bound + 3 * p.exponent_ci_width

    def test_ci_width_shrinks_weak_signal(self):
        scn = random_scenario(2, 1, 1, 0.01, seed=0)
        widths = [p.exponent_ci_width for p in chernoff_gap(scn, "purity_wss", [5, 10, 20], 4000, 0)]
        assert widths[0] >= widths[1] >= widths[2]

    def test_indistinguishable(self):
        scn = random_scenario(2, 1, 1, 1e-6, seed=0)
        (p,) = chernoff_gap(scn, "rank_wss", [50], 2000, seed=0)
        assert p.beta_hat == pytest.approx(1.0, abs=0.01)
        assert p.exponent_hat == pytest.approx(0, abs=1e-4)

    def test_zero_beta_reports_lower_bound(self, qubit):
        (p,) = chernoff_gap(qubit, "purity_wss", [400], 500, seed=0)
        assert p.beta_hat == 0 and p.lower_bound
        assert math.isfinite(p.exponent_hat) and p.exponent_hat > 0


class TestTomography:
    def test_consistent(self, qubit):
        est = naive_tomography_baseline(qubit, 4000, 200, seed=0)
        assert est.beta_hat <= 0.02

    def test_undersampled(self, qubit):
        est = naive_tomography_baseline(qubit, 2, 2000, seed=0)
        assert est.beta_hat == pytest.approx(1 - est.alpha_hat, abs=0.1)

    def test_deterministic_stream(self, qubit):
        a = list(tomography_estimates(qubit.state(), 50, 3, seed=9))
        b = list(tomography_estimates(qubit.state(), 50, 3, seed=9))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_unbiased(self, qubit):
        rho = qubit.state()
        mean = sum(tomography_estimates(rho, 2000, 20, seed=1)) / 20
        assert np.max(np.abs(mean - rho.entries)) < 0.03

    def test_projection(self):
        est = np.diag([1.2, 0.1, -0.3])
        out = project_to_state(est)
        w = np.linalg.eigvalsh(out)
        assert np.trace(out).real == pytest.approx(1)
        assert w.min() >= -1e-12

    def test_dimension_guard(self):
        big = random_scenario(9, 1, 1, 0.2, seed=0)
        with pytest.raises(InfeasibleStrategy):
            naive_tomography_baseline(big, 10, 10, seed=0)


def test_chunk_order_independent(gapped, monkeypatch):
    from incodetect import harness

    monkeypatch.setattr(harness, "CHUNK", 100)
    forward = harness._count_h1("gap_wss", gapped, gapped.theta0, 30, 500, 3, 1, 0, {})
    backward = 0
    for chunk in reversed(range(5)):
        rng = np.random.default_rng(np.random.SeedSequence([3, 1, 0, chunk]))
        backward += int(harness._decisions("gap_wss", gapped, gapped.theta0, 30, 100, rng, {}).sum())
    assert forward == backward


def test_hybrid_search_starts_at_minimum():
    scn = random_scenario(4, 1, 1, 0.2, lambda_gap=0.4, seed=0)
    assert find_sample_complexity(scn, "hybrid_wss", 0.5, 0.1, 200, seed=0) >= 6
