import math

import numpy as np
import pytest

from rangelab import (
    drift_strategy_floor,
    exact_pmf,
    fit_exponent,
    mc_mean_range,
    naive_tail,
    simple_walk,
    splitting_tail,
    theoretical_exponent,
)
from rangelab.errors import DomainError, InsufficientData, NoDriftAtom, RegimeViolation, Stagnation
from rangelab.seeding import SeedRecord
from rangelab.stats import wilson_interval
from rangelab.tail import TailEstimate, tail_threshold
from rangelab.walk import StepDistribution, diagonal_walk

SRW = simple_walk()


class TestTheoreticalExponent:
    def test_theta_one_is_flat(self):
        for n in (1, 100, 10**6):
            assert theoretical_exponent(n, 1.0) == 1.0

    def test_arithmetic(self):
        assert theoretical_exponent(10**4, 2.0) == pytest.approx(100.0, rel=1e-12)

    def test_small_excess_exponent(self):
        delta = 0.3
        n = 5000
        assert theoretical_exponent(n, 1 + delta) == pytest.approx(
            n ** (delta / (delta + 1)), rel=1e-12
        )

    def test_domain(self):
        with pytest.raises(DomainError):
            theoretical_exponent(100, 0.9)
        with pytest.raises(DomainError):
            theoretical_exponent(0, 2.0)


class TestWilson:
    def test_zero_hits_one_sided(self):
        lo, hi = wilson_interval(0, 1000)
        assert lo == 0.0
        assert 0.0 < hi < 0.01

    def test_contains_proportion(self):
        lo, hi = wilson_interval(300, 1000)
        assert lo < 0.3 < hi

    def test_full_hits(self):
        lo, hi = wilson_interval(50, 50)
        assert hi == 1.0
        assert lo > 0.9


class TestNaiveTail:
    def test_matches_enumeration_at_every_threshold(self):
        # oracle: exact law of R_6 from 4^6 enumerated paths
        pm = exact_pmf(SRW, 6)
        for thr in range(2, 8):
            # half-integer r_hat pins ceil(theta * r_hat) at exactly thr
            est = naive_tail(SRW, 6, theta=1.0, N=30_000, seed=SeedRecord(1, thr),
                             r_hat=thr - 0.5, z=4.0, enforce_regime=False)
            assert est.threshold == thr
            exact = float(pm.tail(thr))
            assert est.ci_low <= exact <= est.ci_high

    def test_zero_hits_gives_valid_upper_interval(self):
        pm = exact_pmf(SRW, 4)
        r4 = float(pm.mean)
        est = naive_tail(SRW, 4, theta=6 / r4, N=5000, seed=SeedRecord(2, 0),
                         r_hat=r4, enforce_regime=False)
        # threshold 6 exceeds the 4-step maximum of 5 sites... threshold is 6 of max 5
        assert est.p_hat == 0.0
        assert est.ci_low == 0.0
        assert est.ci_high > 0.0

    def test_median_scale_sanity_band(self):
        entry = mc_mean_range(SRW, 512, 20_000, SeedRecord(3, 0))
        est = naive_tail(SRW, 512, theta=1.0, N=20_000, seed=SeedRecord(3, 1), r_hat=entry.r_hat)
        assert 0.05 < est.p_hat < 0.95

    def test_regime_violation(self):
        with pytest.raises(RegimeViolation):
            naive_tail(SRW, 100, theta=3.0, N=100, seed=SeedRecord(4, 0), r_hat=40.0)

    def test_sensitivity_monotone(self):
        entry = mc_mean_range(SRW, 256, 20_000, SeedRecord(5, 0))
        est = naive_tail(SRW, 256, theta=1.1, N=30_000, seed=SeedRecord(5, 1), r_hat=entry.r_hat)
        assert est.sensitivity[-1] >= est.p_hat >= est.sensitivity[1]


class TestSplitting:
    def test_deterministic(self):
        kwargs = dict(particles=200, kill_fraction=0.25, seed=SeedRecord(6, 0),
                      r_hat=112.0, replications=3)
        a = splitting_tail(SRW, 256, 1.4, **kwargs)
        b = splitting_tail(SRW, 256, 1.4, **kwargs)
        assert a.p_hat == b.p_hat
        assert a.ci_low == b.ci_low

    def test_agrees_with_naive_at_easy_level(self):
        entry = mc_mean_range(SRW, 2048, 20_000, SeedRecord(7, 0))
        nv = naive_tail(SRW, 2048, 1.15, N=100_000, seed=SeedRecord(7, 1), r_hat=entry.r_hat)
        sp = splitting_tail(SRW, 2048, 1.15, particles=400, kill_fraction=0.25,
                            seed=SeedRecord(7, 2), r_hat=entry.r_hat, replications=6)
        assert sp.ci_low <= nv.ci_high and nv.ci_low <= sp.ci_high

    def test_monotone_in_theta(self):
        entry = mc_mean_range(SRW, 1024, 20_000, SeedRecord(8, 0))
        easy = splitting_tail(SRW, 1024, 1.3, particles=300, kill_fraction=0.25,
                              seed=SeedRecord(8, 1), r_hat=entry.r_hat, replications=5)
        hard = splitting_tail(SRW, 1024, 1.6, particles=300, kill_fraction=0.25,
                              seed=SeedRecord(8, 2), r_hat=entry.r_hat, replications=5)
        assert easy.p_hat > hard.p_hat

    def test_stagnation_on_unreachable_level(self):
        # threshold 8 can never be reached by a 6-step walk (at most 7 sites)
        with pytest.raises(Stagnation):
            splitting_tail(SRW, 6, theta=8 / 5.0, particles=64, kill_fraction=0.25,
                           seed=SeedRecord(9, 0), r_hat=5.0, replications=1,
                           enforce_regime=False)

    def test_work_accounting_positive(self):
        est = splitting_tail(SRW, 128, 1.3, particles=100, kill_fraction=0.25,
                             seed=SeedRecord(10, 0), r_hat=60.0, replications=2)
        assert est.work >= 2 * 100 * 128


class TestFitExponent:
    @staticmethod
    def synthetic(nc, c=2.0, expo=0.5, theta=2.0):
        out = []
        for n in nc:
            p = math.exp(-c * n**expo)
            out.append(TailEstimate(
                n=n, theta=theta, p_hat=p, ci_low=p * 0.95, ci_high=p * 1.05,
                method="splitting", work=1, threshold=1,
            ))
        return out

    def test_exact_recovery(self):
        fit = fit_exponent(self.synthetic([2**k for k in range(8, 14)]), theta=2.0)
        assert fit.slope == pytest.approx(0.5, abs=1e-9)
        assert fit.c_low_emp == pytest.approx(2.0, rel=1e-9)
        assert fit.c_up_emp == pytest.approx(2.0, rel=1e-9)
        assert fit.predicted == 0.5
        assert fit.slope_stderr < 1e-9

    def test_zero_hit_and_wide_estimates_excluded(self):
        good = self.synthetic([256, 512, 1024, 2048])
        zero = TailEstimate(n=4096, theta=2.0, p_hat=0.0, ci_low=0.0, ci_high=1e-4,
                            method="splitting", work=1, threshold=1)
        wide = TailEstimate(n=8192, theta=2.0, p_hat=1e-3, ci_low=1e-6, ci_high=0.5,
                            method="splitting", work=1, threshold=1)
        fit = fit_exponent(good + [zero, wide], theta=2.0)
        assert list(fit.n_grid) == [256, 512, 1024, 2048]

    def test_insufficient_data(self):
        with pytest.raises(InsufficientData):
            fit_exponent(self.synthetic([256, 512, 1024]), theta=2.0)


class TestDriftFloor:
    def test_simple_walk(self):
        assert drift_strategy_floor(SRW, 3) == pytest.approx(0.25**3, rel=1e-12)

    def test_diagonal_walk(self):
        assert drift_strategy_floor(diagonal_walk(), 5) == pytest.approx(0.25**5, rel=1e-12)

    def test_no_drift_atom(self):
        vertical = StepDistribution(atoms=((0, -1, 0.5), (0, 1, 0.5)), exact=False)
        with pytest.raises(NoDriftAtom):
            drift_strategy_floor(vertical, 2)

    def test_floor_below_estimated_probability(self):
        # event {R_4 = 5}: all-distinct walks; the drift strategy is one of them
        pm = exact_pmf(SRW, 4)
        r4 = float(pm.mean)
        est = naive_tail(SRW, 4, theta=5 / r4, N=50_000, seed=SeedRecord(11, 0),
                         r_hat=r4, enforce_regime=False)
        assert drift_strategy_floor(SRW, 4) <= est.ci_low

    def test_threshold_helper(self):
        assert tail_threshold(2.0, 10.2) == 21
        assert tail_threshold(1.0, 10.0) == 10
