import math

import numpy as np
import pytest

from rangelab import (
    block_pass_probability,
    estimate_event_probs,
    eval_B,
    eval_E,
    eval_I,
    lower_bound_certificate,
    make_block_params,
    mc_mean_range,
    simple_walk,
    splitting_tail,
    strategy_implication_check,
    upper_chebyshev_probe,
)
from rangelab.blocks import (
    BlockTables,
    ConditionedBlockSampler,
    Estimate,
    EventProbReport,
    analyze_block_sites,
    confinement_tables,
    sample_confined_path_etas,
    _positions_from_codes,
)
from rangelab.errors import BoundNotApplicable, DegenerateBlocks, OutOfBounds, RegimeViolation
from rangelab.rate import curve_from_values, log_mgf
from rangelab.seeding import SeedRecord, derive_rng
from rangelab.walk import WalkPath, simple_walk
from rangelab import scaled_samples

SRW = simple_walk()
ATOM_XY = [(int(a[0]), int(a[1])) for a in SRW.atoms]
CODE = {v: i for i, v in enumerate(ATOM_XY)}
E_, W_, N_, S_ = CODE[(1, 0)], CODE[(-1, 0)], CODE[(0, 1)], CODE[(0, -1)]


def path_from_codes(codes) -> WalkPath:
    codes = np.asarray(codes, dtype=np.uint8)
    pos = _positions_from_codes(SRW, codes, (0, 0))
    return WalkPath(positions=pos, seed=SeedRecord(0, 0), dist_id=SRW.dist_id)


class TestBlockParams:
    def test_upper_regime_arithmetic(self):
        p = make_block_params("upper", 10**4, 2.0, 1.0)
        assert (p.m, p.M) == (738, 14)

    def test_lower_regime_arithmetic(self):
        p = make_block_params("lower", 10**4, 2.0, 1.0)
        assert (p.m, p.M) == (36, 278)

    def test_blocks_cover_path(self):
        p = make_block_params("lower", 10**4, 2.0, 1.0)
        assert (p.M - 1) * p.m + p.tail_len == p.n + 1
        assert 1 <= p.tail_len <= p.m

    def test_degenerate(self):
        with pytest.raises(DegenerateBlocks):
            make_block_params("lower", 100, 1.0, 4.0)

    def test_bad_regime(self):
        with pytest.raises(ValueError):
            make_block_params("sideways", 100, 2.0, 1.0)


class TestEventIndicators:
    def test_all_east_block_fails_endpoint(self):
        path = path_from_codes([E_] * 110)
        assert eval_B(path, 1, 100) is False  # displacement 99 beyond 3 sqrt(m) = 30

    def test_constructed_block_passes(self):
        # 25 east then alternate north/south: confined, endpoint 25 in (20, 30)
        codes = [E_] * 25 + [N_, S_] * 37
        assert len(codes) == 99
        path = path_from_codes(codes)
        assert eval_B(path, 1, 100) is True

    def test_tiny_block_cannot_reach_target(self):
        # endpoint needs (4, 6) after 3 steps: impossible for steps of size 1
        for codes in ([E_, E_, E_], [E_, E_, N_], [N_, E_, E_]):
            assert eval_B(path_from_codes(codes + [N_] * 5), 1, 4) is False

    def test_out_of_bounds(self):
        with pytest.raises(OutOfBounds):
            eval_B(path_from_codes([E_] * 10), 2, 8)

    def test_E_trivial_thresholds(self):
        path = path_from_codes([E_, N_, W_, S_] * 5)
        assert eval_E(path, 1, 8, r_m=6.0, beta=100.0) is True   # threshold below 1
        assert eval_E(path, 1, 8, r_m=100.0, beta=0.01) is False  # threshold above m

    def test_I_trivial_cases(self):
        east = path_from_codes([E_] * 8)
        assert eval_I(east, 1, 4, r_m=3.0, beta=1.0) is True  # disjoint blocks
        loop = path_from_codes([E_, N_, W_, S_] * 2)
        assert eval_I(loop, 1, 4, r_m=4.0, beta=1.0) is False  # full revisit


class TestConditionedSampler:
    @pytest.mark.parametrize("m", [16, 36])
    def test_every_sample_satisfies_the_event(self, m):
        tables = confinement_tables(SRW, m)
        sampler = ConditionedBlockSampler(SRW, tables)
        rng = derive_rng(SeedRecord(1, m))
        for _ in range(300):
            codes = sampler.sample(rng)
            assert eval_B(path_from_codes(codes), 1, m) is True

    def test_exact_probability_matches_monte_carlo(self):
        m = 16
        exact = block_pass_probability(SRW, m)
        rng = derive_rng(SeedRecord(2, 0))
        n_trials = 200_000
        hits = 0
        for _ in range(n_trials):
            codes = rng.integers(0, 4, m - 1, dtype=np.uint8)
            if eval_B(path_from_codes(codes), 1, m):
                hits += 1
        sd = math.sqrt(exact * (1 - exact) / n_trials)
        assert abs(hits / n_trials - exact) < 4 * sd

    def test_probability_positive_at_scale_range(self):
        for m in (8, 64, 256, 1024):
            assert block_pass_probability(SRW, m) > 5e-4

    def test_truncated_horizon_tables(self):
        tables = confinement_tables(SRW, 36, horizon=10, endpoint=False)
        assert tables.steps == 9
        sampler = ConditionedBlockSampler(SRW, tables)
        rng = derive_rng(SeedRecord(3, 0))
        s = math.sqrt(36)
        for _ in range(100):
            codes = sampler.sample(rng)
            rel = _positions_from_codes(SRW, codes, (0, 0))[:, 0]
            assert rel.min() > -s and rel.max() < 3 * s


class TestAnalyzeBlockSites:
    def test_detects_violation_and_identity_break(self):
        a = np.array([1, 2, 3], dtype=np.uint64)
        b = np.array([3, 4], dtype=np.uint64)
        c = np.array([5, 6], dtype=np.uint64)
        union, total, neighbor, violations = analyze_block_sites([a, b, c])
        assert (union, total, neighbor, violations) == (6, 7, 1, 0)
        # now share site 1 between blocks 0 and 2
        c_bad = np.array([1, 6], dtype=np.uint64)
        union, total, neighbor, violations = analyze_block_sites([a, b, c_bad])
        assert violations == 1
        assert union != total - neighbor


@pytest.fixture(scope="module")
def report():
    r_m = mc_mean_range(SRW, 64, 20_000, SeedRecord(4, 0)).r_hat
    return estimate_event_probs(SRW, 64, beta=5.0, N=2000, seed=SeedRecord(4, 1), r_m=r_m)


class TestEventProbs:
    def test_mc_p_B_consistent_with_exact(self, report):
        assert report.p_B.lo - 1e-3 <= report.p_B_exact <= report.p_B.hi + 1e-3

    def test_probabilities_are_proportions(self, report):
        for est in (report.p_B, report.p_E, report.p_I, report.p_eta_given_BB):
            assert 0.0 <= est.lo <= est.p <= est.hi <= 1.0

    def test_p_E_monotone_in_beta(self):
        r_m = mc_mean_range(SRW, 64, 20_000, SeedRecord(4, 0)).r_hat
        lo = estimate_event_probs(SRW, 64, beta=2.0, N=2000, seed=SeedRecord(4, 2), r_m=r_m)
        hi = estimate_event_probs(SRW, 64, beta=8.0, N=2000, seed=SeedRecord(4, 3), r_m=r_m)
        assert hi.p_E.p >= lo.p_E.p

    def test_minimum_block_length(self):
        with pytest.raises(ValueError):
            estimate_event_probs(SRW, 7, beta=5.0, N=2000, seed=SeedRecord(4, 4), r_m=5.0)


class TestOneDependence:
    def test_distant_eta_uncorrelated_under_confinement(self):
        params = make_block_params("lower", 288, 1.2, 1.2)
        assert params.M >= 8
        r_m = mc_mean_range(SRW, params.m, 20_000, SeedRecord(5, 0)).r_hat
        etas = sample_confined_path_etas(SRW, params, SeedRecord(5, 1), r_m, N=800)
        count = etas.shape[0]
        for j in range(etas.shape[1]):
            for k in range(j + 2, etas.shape[1]):
                x = etas[:, j].astype(float)
                y = etas[:, k].astype(float)
                if x.std() == 0 or y.std() == 0:
                    continue
                corr = float(np.corrcoef(x, y)[0, 1])
                assert abs(corr) < 4 / math.sqrt(count)


class TestImplication:
    def test_small_scale_construction(self):
        n, theta, beta = 1024, 1.4, 2.5
        params = make_block_params("lower", n, theta, beta)
        r_m = mc_mean_range(SRW, params.m, 20_000, SeedRecord(6, 0)).r_hat
        r_tail = mc_mean_range(SRW, params.tail_len, 20_000, SeedRecord(6, 1)).r_hat
        r_n = mc_mean_range(SRW, n, 20_000, SeedRecord(6, 2)).r_hat
        report = strategy_implication_check(
            SRW, n, theta, beta, N=25, seed=SeedRecord(6, 3),
            r_m=r_m, r_n_hat=r_n, r_tail=r_tail,
        )
        assert report.identity_violations == 0
        assert report.disjoint_violations == 0
        assert report.implication_fraction == 1.0
        assert report.eta_fraction == 1.0  # by construction of accepted samples
        assert report.mean_range >= report.threshold


class TestCertificate:
    @staticmethod
    def fake_report(p_b, p_eta, m=36, beta=5.0):
        est = lambda p: Estimate(p=p, lo=max(0.0, p - 0.01), hi=min(1.0, p + 0.01), samples=1000)  # noqa: E731
        return EventProbReport(m=m, beta=beta, N=1000, p_B=est(p_b), p_E=est(0.99),
                               p_I=est(0.9), p_eta_given_BB=est(p_eta), p_B_exact=p_b)

    def test_arithmetic(self):
        params = make_block_params("lower", 10**4, 2.0, 1.0)
        params = BlockParamsPatch(params, M=14)
        cert = lower_bound_certificate(params, self.fake_report(0.1, 0.8))
        assert cert == pytest.approx(14 * (math.log(0.1) + math.log(0.25)), rel=1e-12)

    def test_single_block(self):
        params = BlockParamsPatch(make_block_params("lower", 10**4, 2.0, 1.0), M=1)
        cert = lower_bound_certificate(params, self.fake_report(0.1, 0.8))
        assert cert == pytest.approx(math.log(0.1) + math.log(0.25), rel=1e-12)

    def test_not_applicable_below_three_quarters(self):
        params = make_block_params("lower", 10**4, 2.0, 1.0)
        with pytest.raises(BoundNotApplicable):
            lower_bound_certificate(params, self.fake_report(0.1, 0.70))

    def test_certificate_below_direct_estimate(self):
        # the certified probability must sit below any direct estimate
        n, theta, beta = 1024, 1.4, 2.5
        params = make_block_params("lower", n, theta, beta)
        r_m = mc_mean_range(SRW, params.m, 20_000, SeedRecord(7, 0)).r_hat
        r_n = mc_mean_range(SRW, n, 20_000, SeedRecord(7, 1)).r_hat
        report = estimate_event_probs(SRW, params.m, beta, N=3000, seed=SeedRecord(7, 2), r_m=r_m)
        if report.p_eta_given_BB.p > 0.75 and report.p_B.p > 0:
            cert = lower_bound_certificate(params, report)
            est = splitting_tail(SRW, n, theta, particles=400, kill_fraction=0.25,
                                 seed=SeedRecord(7, 3), r_hat=r_n, replications=5)
            assert cert <= math.log(max(est.ci_high, 1e-300))


def BlockParamsPatch(params, M):
    from dataclasses import replace

    return replace(params, M=M)


class TestChebyshevProbe:
    def make_curve(self):
        grid = np.linspace(0.0, 5.0, 101)
        return curve_from_values(grid, grid**2 / 2)

    def test_lambda_zero_vacuous(self):
        probe = upper_chebyshev_probe(self.make_curve(), 4096, 2.0, 1.0, 0.0, 1300.0, 300.0)
        assert probe.bound == 1.0

    def test_decreasing_in_block_count(self):
        # same per-block terms, larger n means more blocks and smaller bound
        curve = self.make_curve()
        small = upper_chebyshev_probe(curve, 2**12, 2.0, 1.0, 1.0, 1300.0, 300.0)
        large = upper_chebyshev_probe(curve, 2**16, 2.0, 1.0, 1.0, 17000.0, 300.0)
        assert large.M > small.M
        assert large.bound < small.bound

    def test_bound_dominates_direct_estimate(self):
        n, theta, beta = 4096, 2.0, 1.0
        params = make_block_params("upper", n, theta, beta)
        m = params.m
        r_m_entry = mc_mean_range(SRW, m, 60_000, SeedRecord(8, 0))
        r_n_entry = mc_mean_range(SRW, n, 60_000, SeedRecord(8, 1))
        samples = scaled_samples(SRW, m, 20_000, SeedRecord(8, 2),
                                 (r_m_entry.r_hat, r_m_entry.stderr))
        curve = log_mgf(samples, np.linspace(0.0, 2.0, 41))
        direct = splitting_tail(SRW, n, theta, particles=500, kill_fraction=0.25,
                                seed=SeedRecord(8, 3), r_hat=r_n_entry.r_hat, replications=5)
        probe = upper_chebyshev_probe(curve, n, theta, beta, 0.2,
                                      r_n_entry.r_hat, r_m_entry.r_hat, direct=direct)
        assert probe.direct_p_hat == direct.p_hat
        assert probe.bound >= direct.p_hat
        assert probe.bound_exact_margin >= direct.p_hat
        assert probe.bound_optimized >= 0.0
