"""Upper-tail probability estimates P(R_n >= theta * r_n) and exponent fits.

Two estimators share the integer event threshold ceil(theta * r_hat_n):
plain Monte Carlo with a Wilson interval, and adaptive multilevel
splitting driven by the running range.

Splitting regrows a killed particle from a random survivor and then
applies law-preserving moves conditioned to stay above the kill level:

* tail refresh: the prefix range is nondecreasing, so copying the donor
  up to its first crossing of the level and resampling the remaining
  steps always lands above the level;
* pivot regeneration: resample the suffix after a uniform pivot time,
  accepted only if the new range clears the level (Metropolis; the
  proposal is a draw from the path law given the prefix);
* symmetry pivot: relabel the suffix step codes through a random lattice
  symmetry of the step law, which preserves the path law exactly and
  reorients whole path segments; accepted on clearing the level.

The symmetry move keeps the ensemble diverse near the deep thresholds
where crossing times sit at the end of the path and plain suffix moves
degenerate.  The product-of-survival-fractions estimator stays unbiased
because every move leaves the conditioned path law invariant; intervals
come from independent replications.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import VisitArena, visit_count_batch
from .errors import DomainError, InsufficientData, NoDriftAtom, RegimeViolation, Stagnation
from .moments import mean_chunk_sizes
from .ranges import crossing_step_of_codes, range_of_codes
from .seeding import SeedRecord, derive_rng
from .stats import t_interval, wilson_interval
from .walk import StepDistribution, sample_step_codes


@dataclass(frozen=True)
class TailEstimate:
    n: int
    theta: float
    p_hat: float
    ci_low: float
    ci_high: float
    method: str  # "naive" or "splitting"
    work: int    # total path-steps simulated
    threshold: int = 0
    sensitivity: dict = field(default_factory=dict)  # threshold offset -> p_hat

    def __post_init__(self):
        if self.theta < 1:
            raise ValueError("theta must be at least 1")
        if not 0.0 <= self.ci_low <= self.p_hat <= self.ci_high <= 1.0:
            raise ValueError("confidence interval must bracket the estimate in [0, 1]")


@dataclass(frozen=True)
class ExponentFit:
    theta: float
    n_grid: np.ndarray
    slope: float
    intercept: float
    slope_stderr: float
    predicted: float
    c_low_emp: float
    c_up_emp: float


def theoretical_exponent(n: int, theta: float) -> float:
    """n ** (1 - 1/theta), the decay scale of the two-sided bounds."""
    if theta < 1:
        raise DomainError(f"theta must be >= 1, got {theta}")
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    return float(n) ** (1.0 - 1.0 / theta)


def tail_threshold(theta: float, r_hat: float) -> int:
    return int(math.ceil(theta * r_hat))


def check_regime(n: int, theta: float, r_hat: float, enforce: bool = True) -> None:
    if theta < 1:
        raise ValueError("theta must be at least 1")
    if enforce and theta * r_hat > n:
        raise RegimeViolation(f"theta * r_hat = {theta * r_hat:.1f} exceeds n = {n}")


def naive_tail(
    dist: StepDistribution,
    n: int,
    theta: float,
    N: int,
    seed: SeedRecord,
    r_hat: float,
    z: float = 1.96,
    enforce_regime: bool = True,
) -> TailEstimate:
    """Hit fraction of {R_n >= ceil(theta * r_hat)} with a Wilson interval.

    Zero hits are legitimate: the estimate is 0 with the one-sided Wilson
    upper bound.  The same samples also price the thresholds one below
    and one above, for the threshold sensitivity report.
    ``enforce_regime=False`` admits thresholds beyond theta * r_hat <= n,
    which the short-walk oracle comparisons need.
    """
    check_regime(n, theta, r_hat, enforce_regime)
    thr = tail_threshold(theta, r_hat)
    hits = {-1: 0, 0: 0, 1: 0}
    for j, size in enumerate(mean_chunk_sizes(n, N)):
        ranges = _sample_ranges_chunk(dist, n, size, seed.child(j))
        for off in hits:
            hits[off] += int(np.count_nonzero(ranges >= thr + off))
    lo, hi = wilson_interval(hits[0], N, z)
    p = hits[0] / N
    return TailEstimate(
        n=n, theta=theta, p_hat=p, ci_low=min(lo, p), ci_high=max(hi, p),
        method="naive", work=N * n, threshold=thr,
        sensitivity={-1: hits[-1] / N, 1: hits[1] / N},
    )


def _sample_ranges_chunk(dist, n, size, chunk_seed):
    from .ranges import sample_range_batch

    return sample_range_batch(dist, n, size, derive_rng(chunk_seed))


def splitting_tail(
    dist: StepDistribution,
    n: int,
    theta: float,
    particles: int,
    kill_fraction: float,
    seed: SeedRecord,
    r_hat: float,
    replications: int = 10,
    max_iterations: int = 200_000,
    enforce_regime: bool = True,
) -> TailEstimate:
    """Adaptive multilevel splitting estimate of P(R_n >= theta * r_hat).

    Each replication runs an independent ensemble; the reported interval
    is the Student-t interval over replication estimates.  Integer levels
    force strict progress, so the run either reaches the target or raises
    ``Stagnation`` when an ensemble collapses onto a single level.
    """
    if particles < 2:
        raise ValueError("particles must be at least 2")
    if not 0.0 < kill_fraction < 0.5:
        raise ValueError("kill_fraction must lie in (0, 1/2)")
    check_regime(n, theta, r_hat, enforce_regime)
    thr = tail_threshold(theta, r_hat)
    targets = [thr - 1, thr, thr + 1]
    per_target: dict[int, list[float]] = {t: [] for t in targets}
    work = 0
    for rep in range(replications):
        rng = derive_rng(seed.child(rep))
        estimates, rep_work = _splitting_replication(
            dist, n, targets, particles, kill_fraction, rng, max_iterations
        )
        work += rep_work
        for t in targets:
            per_target[t].append(estimates[t])

    p, lo, hi = t_interval(np.array(per_target[thr]))
    p = max(p, 0.0)
    lo = min(max(lo, 0.0), p)
    hi = min(max(hi, p), 1.0)
    return TailEstimate(
        n=n, theta=theta, p_hat=min(p, 1.0), ci_low=lo, ci_high=hi,
        method="splitting", work=work, threshold=thr,
        sensitivity={
            -1: float(np.mean(per_target[thr - 1])),
            1: float(np.mean(per_target[thr + 1])),
        },
    )


def symmetry_code_permutations(dist: StepDistribution) -> np.ndarray:
    """Step-code permutations of the lattice symmetries fixing the law.

    Candidates are the eight dihedral isometries; one that maps every
    atom to an atom of equal probability permutes the step codes without
    changing the path measure.  Point reflection is always present for
    the symmetric laws admitted here; identity is excluded.
    """
    mats = []
    for a, b, c, d in [(1, 0, 0, 1), (-1, 0, 0, -1), (0, -1, 1, 0), (0, 1, -1, 0),
                       (1, 0, 0, -1), (-1, 0, 0, 1), (0, 1, 1, 0), (0, -1, -1, 0)]:
        mats.append(np.array([[a, b], [c, d]], dtype=np.int64))
    atom_index = {(a[0], a[1]): i for i, a in enumerate(dist.atoms)}
    probs = dist.probs
    perms = []
    for mat in mats[1:]:  # skip identity
        perm = np.empty(len(dist), dtype=np.uint8)
        ok = True
        for i, (dx, dy, _) in enumerate(dist.atoms):
            image = (int(mat[0, 0] * dx + mat[0, 1] * dy), int(mat[1, 0] * dx + mat[1, 1] * dy))
            j = atom_index.get(image)
            if j is None or abs(probs[i] - probs[j]) > 1e-12:
                ok = False
                break
            perm[i] = j
        if ok:
            perms.append(perm)
    return np.array(perms, dtype=np.uint8)


def _splitting_replication(
    dist: StepDistribution,
    n: int,
    targets: list[int],
    particles: int,
    kill_fraction: float,
    rng: np.random.Generator,
    max_iterations: int,
    extra_moves: int = 2,
) -> tuple[dict[int, float], int]:
    arena = VisitArena(n + 1)
    codes = sample_step_codes(dist, particles * n, rng).reshape(particles, n)
    gen0 = arena.reserve(particles)
    levels = visit_count_batch(codes, dist.dxs, dist.dys, arena.keys, arena.stamps, gen0)
    work = particles * n
    perms = symmetry_code_permutations(dist)

    results: dict[int, float] = {}
    pending = sorted(targets)
    log_prod = 0.0
    kill_index = max(0, math.ceil(kill_fraction * particles) - 1)

    for _ in range(max_iterations):
        level = int(np.partition(levels, kill_index)[kill_index])
        while pending and level >= pending[0]:
            t = pending.pop(0)
            results[t] = math.exp(log_prod) * float(np.mean(levels >= t))
        if not pending:
            return results, work
        survivors = np.flatnonzero(levels > level)
        if survivors.size == 0:
            raise Stagnation(f"ensemble collapsed onto level {level} before target {pending[0]}")
        log_prod += math.log(survivors.size / particles)
        for i in np.flatnonzero(levels <= level):
            donor = int(survivors[rng.integers(0, survivors.size)])
            state = codes[donor].copy()
            # tail refresh from the donor's first crossing: always above level
            tau = crossing_step_of_codes(state, dist, level, arena)
            state[tau:] = sample_step_codes(dist, n - tau, rng)
            lvl = range_of_codes(state, dist, arena)
            work += n - tau
            for _move in range(extra_moves):
                t = int(rng.integers(0, n))
                candidate = state.copy()
                if perms.size and rng.random() < 0.5:
                    perm = perms[rng.integers(0, perms.shape[0])]
                    candidate[t:] = perm[candidate[t:]]
                else:
                    candidate[t:] = sample_step_codes(dist, n - t, rng)
                    work += n - t
                cand_lvl = range_of_codes(candidate, dist, arena)
                if cand_lvl > level:
                    state = candidate
                    lvl = cand_lvl
            codes[i] = state
            levels[i] = lvl
    raise Stagnation(f"no convergence within {max_iterations} iterations")


def fit_exponent(estimates: list[TailEstimate], theta: float) -> ExponentFit:
    """Least squares of log(-log p_hat) against log n, plus the empirical
    envelope constants (-log p_hat) / n**(1 - 1/theta).

    Only informative estimates enter: positive p_hat below 1 with a CI
    ratio under 10.  Zero-hit estimates are excluded by construction.
    """
    rows = []
    for est in estimates:
        if abs(est.theta - theta) > 1e-12:
            continue
        if not (0.0 < est.p_hat < 1.0):
            continue
        if est.ci_low <= 0.0 or est.ci_high / est.ci_low >= 10.0:
            continue
        rows.append((est.n, est.p_hat))
    seen = {}
    for n, p in rows:
        seen[n] = p
    if len(seen) < 4:
        raise InsufficientData(f"need >= 4 informative estimates at distinct n, have {len(seen)}")
    ns = np.array(sorted(seen), dtype=np.float64)
    ps = np.array([seen[int(n)] for n in ns])
    x = np.log(ns)
    y = np.log(-np.log(ps))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    dof = x.size - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    sxx = float(np.sum((x - x.mean()) ** 2))
    slope_stderr = math.sqrt(s2 / sxx) if sxx > 0 else math.inf
    envelope = -np.log(ps) / ns ** (1.0 - 1.0 / theta)
    return ExponentFit(
        theta=theta, n_grid=ns.astype(np.int64),
        slope=float(slope), intercept=float(intercept), slope_stderr=slope_stderr,
        predicted=1.0 - 1.0 / theta,
        c_low_emp=float(envelope.max()), c_up_emp=float(envelope.min()),
    )


def drift_strategy_floor(dist: StepDistribution, n: int) -> float:
    """Probability floor c1**n of marching the first coordinate up every step.

    Such a walk visits n+1 distinct sites, so this is a crude lower bound
    for P(R_n = n + 1); it underflows to 0.0 for large n.
    """
    best = 0.0
    for dx, _, p in dist.atoms:
        if dx > 0:
            best = max(best, float(p))
    if best == 0.0:
        raise NoDriftAtom("no atom with positive first coordinate")
    return best**n
