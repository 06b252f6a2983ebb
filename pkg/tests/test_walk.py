import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rangelab import (
    build_distribution,
    covariance,
    diagonal_walk,
    load_distribution,
    sample_path,
    simple_walk,
)
from rangelab.errors import (
    BudgetExceeded,
    NonzeroMean,
    NotSymmetric,
    OneDimensionalSupport,
    ProbabilitiesDoNotSumToOne,
)
from rangelab.seeding import SeedRecord, derive_rng, task_seed
from rangelab.walk import sample_step_codes

Q = Fraction(1, 4)


class TestBuildDistribution:
    def test_simple_walk_valid(self):
        d = simple_walk()
        assert len(d) == 4
        assert d.exact

    def test_one_dimensional_support(self):
        with pytest.raises(OneDimensionalSupport):
            build_distribution([(1, 0, Fraction(1, 2)), (-1, 0, Fraction(1, 2))])

    def test_collinear_diagonal_rejected(self):
        with pytest.raises(OneDimensionalSupport):
            build_distribution([(1, 1, Fraction(1, 2)), (-1, -1, Fraction(1, 2))])

    def test_nonzero_mean(self):
        with pytest.raises(NonzeroMean):
            build_distribution([(1, 0, Fraction(1))])

    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(ProbabilitiesDoNotSumToOne):
            build_distribution([(1, 0, Q), (-1, 0, Q), (0, 1, Q), (0, -1, Fraction(1, 8))])

    def test_not_symmetric(self):
        # zero mean but (2, 0) has no mirror atom
        bad = [(2, 0, Fraction(1, 6)), (-1, 0, Fraction(2, 6)),
               (0, 1, Q), (0, -1, Q)]
        with pytest.raises(NotSymmetric):
            build_distribution(bad)

    def test_asymmetric_support_rejected(self):
        bad = [(1, 0, Fraction(1, 3)), (-1, 0, Fraction(1, 3)),
               (0, 1, Fraction(1, 3))]
        with pytest.raises(NonzeroMean):
            build_distribution(bad)

    def test_duplicate_atom_rejected(self):
        with pytest.raises(ValueError):
            build_distribution([(1, 0, Q), (1, 0, Q), (-1, 0, Q), (0, 1, Fraction(1, 8)), (0, -1, Fraction(1, 8))])

    def test_float_tolerance(self):
        d = build_distribution([(1, 0, 0.25), (-1, 0, 0.25), (0, 1, 0.25), (0, -1, 0.25)])
        assert not d.exact

    def test_json_string_rationals(self):
        d = load_distribution({"atoms": [[1, 0, "1/4"], [-1, 0, "1/4"], [0, 1, "1/4"], [0, -1, "1/4"]]})
        assert d == simple_walk()

    def test_named_distributions(self):
        assert load_distribution("simple") == simple_walk()
        assert load_distribution("diagonal") == diagonal_walk()


@st.composite
def symmetric_dists(draw):
    """Symmetrized rational-weight laws containing both axis directions."""
    pool = [(1, 0), (0, 1), (1, 1), (2, 1), (1, -1), (0, 0)]
    picked = draw(st.lists(st.sampled_from(pool), min_size=0, max_size=3, unique=True))
    vectors = {(1, 0), (0, 1)} | set(picked)
    weights = {}
    for v in sorted(vectors):
        w = draw(st.integers(min_value=1, max_value=9))
        weights[v] = weights.get(v, 0) + w
        if v != (0, 0):
            mv = (-v[0], -v[1])
            weights[mv] = weights.get(mv, 0) + w
    total = sum(weights.values())
    return build_distribution([(v[0], v[1], Fraction(w, total)) for v, w in weights.items()])


class TestCovariance:
    def test_simple_walk_gamma(self, srw):
        cov = covariance(srw)
        assert np.allclose(cov.gamma, np.diag([0.5, 0.5]))
        assert abs(cov.e1 - math.pi) < 1e-12

    def test_diagonal_walk_gamma(self):
        # sum p * v v^T over (+-1, +-1)/4 : diagonal 1, off terms cancel
        cov = covariance(diagonal_walk())
        assert np.allclose(cov.gamma, np.eye(2))
        assert abs(cov.e1 - 2 * math.pi) < 1e-12

    @given(symmetric_dists())
    @settings(max_examples=40, deadline=None)
    def test_random_laws_validate_and_have_pd_covariance(self, dist):
        cov = covariance(dist)
        assert cov.gamma[0, 1] == cov.gamma[1, 0]
        assert cov.det_gamma > 0
        assert abs(cov.e1 - 2 * math.pi * math.sqrt(cov.det_gamma)) < 1e-12


class TestSamplePath:
    def test_zero_steps(self, srw):
        path = sample_path(srw, 0, SeedRecord(7, 0))
        assert path.positions.shape == (1, 2)
        assert (path.positions[0] == 0).all()

    def test_deterministic(self, srw):
        a = sample_path(srw, 500, SeedRecord(42, 3))
        b = sample_path(srw, 500, SeedRecord(42, 3))
        assert (a.positions == b.positions).all()
        c = sample_path(srw, 500, SeedRecord(42, 4))
        assert not (a.positions == c.positions).all()

    def test_every_increment_is_an_atom(self, srw):
        atoms = {(a[0], a[1]) for a in srw.atoms}
        for idx in range(20):
            path = sample_path(srw, 50, SeedRecord(1, idx))
            steps = np.diff(path.positions, axis=0)
            assert all((int(dx), int(dy)) in atoms for dx, dy in steps)

    def test_budget(self, srw):
        with pytest.raises(BudgetExceeded):
            sample_path(srw, 10**9, SeedRecord(0, 0))

    def test_atom_frequencies_binomial(self, srw):
        n = 10**5
        codes = sample_step_codes(srw, n, derive_rng(SeedRecord(11, 0)))
        for code in range(4):
            p = 0.25
            freq = np.count_nonzero(codes == code)
            sd = math.sqrt(n * p * (1 - p))
            assert abs(freq - n * p) < 4 * sd

    def test_nonuniform_codes_match_probs(self):
        dist = build_distribution([
            (1, 0, Fraction(1, 3)), (-1, 0, Fraction(1, 3)),
            (0, 1, Fraction(1, 6)), (0, -1, Fraction(1, 6)),
        ])
        n = 10**5
        codes = sample_step_codes(dist, n, derive_rng(SeedRecord(12, 0)))
        for code, p in enumerate(dist.probs):
            freq = np.count_nonzero(codes == code)
            sd = math.sqrt(n * p * (1 - p))
            assert abs(freq - n * p) < 4 * sd

    def test_endpoint_mean_and_covariance(self, srw):
        # endpoints via multinomial step counts; N = 1e5 walks of n = 1e4
        n, N = 10**4, 10**5
        rng = derive_rng(SeedRecord(13, 0))
        counts = rng.multinomial(n, srw.probs, size=N)
        vecs = np.stack([srw.dxs, srw.dys], axis=1)
        ends = counts @ vecs / math.sqrt(n)
        gamma = covariance(srw).gamma
        for axis in range(2):
            assert abs(ends[:, axis].mean()) < 4 * ends[:, axis].std(ddof=1) / math.sqrt(N)
        emp = np.cov(ends.T)
        assert np.all(np.abs(emp - gamma) < 0.05 * np.max(np.abs(gamma)))


class TestSeeding:
    def test_task_seed_stable(self):
        a = task_seed(5, "mean", 100)
        b = task_seed(5, "mean", 100)
        assert derive_rng(a).integers(0, 2**63) == derive_rng(b).integers(0, 2**63)

    def test_distinct_labels_distinct_streams(self):
        draws = {
            str(label): derive_rng(task_seed(5, *label)).integers(0, 2**63)
            for label in [("mean", 100), ("mean", 101), ("clt", 100), ("tail", 100, 2.0)]
        }
        assert len(set(draws.values())) == len(draws)

    def test_children_are_independent_streams(self):
        base = SeedRecord(9, 1)
        x = derive_rng(base.child(0)).integers(0, 2**63)
        y = derive_rng(base.child(1)).integers(0, 2**63)
        assert x != y
