"""Block constructions behind both tail bounds, with every step measurable.

The confinement event B constrains only the first coordinate of a block's
relative increments, so exact conditional sampling is a one-dimensional
Doob transform: a backward table h[t][x] of success probabilities drives
the x-increments, and the full atom is completed from the conditional law
given the chosen x-step.  Blocks are independent given their anchors and
are stitched with one free connector step each, which reproduces the path
law conditioned on the intersection of the B events exactly.  The h table
also yields P(B) to floating precision, a strong cross-check on the Monte
Carlo estimates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import sample_block_codes
from .errors import (
    BoundNotApplicable,
    DegenerateBlocks,
    OutOfBounds,
    RejectionBudgetExceeded,
)
from .rate import LogMgfCurve, _conjugate_interpolant, legendre
from .ranges import pack_sites, window_sites
from .seeding import SeedRecord, derive_rng
from .stats import wilson_interval
from .tail import TailEstimate
from .walk import StepDistribution, WalkPath, sample_step_codes

MIN_CONDITIONAL_ACCEPTANCE = 1e-3


@dataclass(frozen=True)
class BlockParams:
    regime: str  # "upper" or "lower"
    n: int
    theta: float
    beta: float
    m: int
    M: int

    @property
    def tail_len(self) -> int:
        """Positions in the final, possibly truncated block."""
        return self.n + 1 - (self.M - 1) * self.m


def make_block_params(regime: str, n: int, theta: float, beta: float) -> BlockParams:
    """Block length and count for either proof regime.

    upper: m = floor(e^(beta+1) * n^(1/theta));  lower: m = floor(exp(log n / theta - beta)).
    M = ceil(n / m) either way; the final block is truncated so the blocks
    tile the n+1 path positions exactly.
    """
    if regime not in ("upper", "lower"):
        raise ValueError(f"unknown regime {regime!r}")
    if theta < 1 or n < 4 or beta <= 0:
        raise ValueError("need theta >= 1, n >= 4, beta > 0")
    if regime == "upper":
        m = math.floor(math.exp(beta + 1.0) * n ** (1.0 / theta))
    else:
        m = math.floor(math.exp(math.log(n) / theta - beta))
    if m < 2:
        raise DegenerateBlocks(f"m = {m} < 2 at beta = {beta}")
    M = math.ceil(n / m)
    if M < 1:
        raise DegenerateBlocks(f"M = {M} < 1")
    return BlockParams(regime=regime, n=n, theta=theta, beta=beta, m=m, M=M)


def _strip_bounds(m: int) -> tuple[int, int, int, int]:
    """Allowed integer x range of the open strip and the endpoint target."""
    s = math.sqrt(m)
    lo = math.floor(-s) + 1
    hi = math.ceil(3 * s) - 1
    tlo = math.floor(2 * s) + 1
    return lo, hi, tlo, hi


def eval_B(path: WalkPath, k: int, m: int) -> bool:
    """Confinement event for block k: relative first coordinate inside
    (-sqrt(m), 3 sqrt(m)) at every block position, endpoint displacement
    inside (2 sqrt(m), 3 sqrt(m)).  Open intervals, as printed."""
    start = (k - 1) * m
    stop = k * m
    if k < 1 or stop > path.n + 1:
        raise OutOfBounds(f"block {k} of length {m} outside path of n = {path.n}")
    rel = path.positions[start:stop, 0] - path.positions[start, 0]
    lo, hi, tlo, thi = _strip_bounds(m)
    if rel.min() < lo or rel.max() > hi:
        return False
    return bool(tlo <= rel[-1] <= thi)


def eval_E(path: WalkPath, k: int, m: int, r_m: float, beta: float) -> bool:
    """Block range above the deflated mean r_m * (1 - (beta/2)/log m)."""
    if r_m <= 0:
        raise ValueError("r_m must be positive")
    if m < 3:
        raise ValueError("m must be at least 3")
    rng_k = window_sites(path, (k - 1) * m, k * m).size
    return rng_k >= r_m * (1.0 - (beta / 2.0) / math.log(m))


def eval_I(path: WalkPath, k: int, m: int, r_m: float, beta: float) -> bool:
    """Neighbouring overlap at most r_m * (beta/6)/log m."""
    if (k + 1) * m > path.n + 1:
        raise OutOfBounds(f"blocks ({k}, {k + 1}) of length {m} outside path")
    left = window_sites(path, (k - 1) * m, k * m)
    right = window_sites(path, k * m, (k + 1) * m)
    overlap = np.intersect1d(left, right, assume_unique=True).size
    return overlap <= r_m * (beta / 6.0) / math.log(m)


# ---------------------------------------------------------------------------
# exact conditional sampling of B-blocks


@dataclass(frozen=True)
class BlockTables:
    """Backward success-probability table for one block geometry."""

    m: int            # nominal block length setting the strip width
    horizon: int      # positions actually sampled (tail blocks are shorter)
    lo: int
    h: np.ndarray     # shape (horizon, states)
    p_exact: float    # P(B) for this geometry, from the table

    @property
    def steps(self) -> int:
        return self.horizon - 1


def _x_groups(dist: StepDistribution):
    """Atoms grouped by x-increment, with marginal and conditional tables."""
    groups: dict[int, list[int]] = {}
    for code, (dx, _, _) in enumerate(dist.atoms):
        groups.setdefault(dx, []).append(code)
    probs = dist.probs
    gdx = np.array(sorted(groups), dtype=np.int64)
    gprob = np.empty(gdx.size, dtype=np.float64)
    goff = np.zeros(gdx.size + 1, dtype=np.int64)
    codes_flat: list[int] = []
    cdf_flat: list[float] = []
    for j, dxv in enumerate(gdx):
        members = groups[int(dxv)]
        marg = float(sum(probs[c] for c in members))
        gprob[j] = marg
        acc = 0.0
        for c in members:
            acc += probs[c] / marg
            codes_flat.append(c)
            cdf_flat.append(acc)
        cdf_flat[-1] = 1.0
        goff[j + 1] = len(codes_flat)
    return gdx, gprob, goff, np.array(codes_flat, np.uint8), np.array(cdf_flat, np.float64)


def confinement_tables(
    dist: StepDistribution, m: int, horizon: int | None = None, endpoint: bool = True
) -> BlockTables:
    """Backward table of P(stay in the strip [and hit the endpoint window]).

    ``horizon`` defaults to m; a truncated final block passes its own
    shorter horizon and drops the endpoint requirement, keeping only the
    confinement that the geometric disjointness argument needs.
    """
    if m < 2:
        raise ValueError("m must be at least 2")
    horizon = m if horizon is None else horizon
    if horizon < 1 or horizon > m:
        raise ValueError("horizon must lie in [1, m]")
    lo, hi, tlo, thi = _strip_bounds(m)
    S = hi - lo + 1
    gdx, gprob, _, _, _ = _x_groups(dist)
    h = np.zeros((horizon, S), dtype=np.float64)
    xs = np.arange(lo, hi + 1)
    if endpoint:
        h[horizon - 1] = ((xs >= tlo) & (xs <= thi)).astype(np.float64)
    else:
        h[horizon - 1] = 1.0
    idx = np.arange(S)
    for t in range(horizon - 2, -1, -1):
        acc = np.zeros(S)
        for dxv, p in zip(gdx, gprob):
            nxt = idx + dxv
            ok = (nxt >= 0) & (nxt < S)
            acc[ok] += p * h[t + 1][nxt[ok]]
        h[t] = acc
    return BlockTables(m=m, horizon=horizon, lo=lo, h=h, p_exact=float(h[0][-lo]))


def block_pass_probability(dist: StepDistribution, m: int) -> float:
    """Exact P(B) for a full block, by the backward recursion."""
    return confinement_tables(dist, m).p_exact


class ConditionedBlockSampler:
    """Draws block step codes conditioned on the confinement event."""

    def __init__(self, dist: StepDistribution, tables: BlockTables):
        if tables.p_exact <= 0.0:
            raise RejectionBudgetExceeded(
                f"confinement event has probability 0 at m = {tables.m}, "
                f"horizon = {tables.horizon}"
            )
        self.dist = dist
        self.tables = tables
        self._groups = _x_groups(dist)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        steps = self.tables.steps
        if steps == 0:
            return np.empty(0, dtype=np.uint8)
        gdx, gprob, goff, gcodes, gcdf = self._groups
        uniforms = rng.random((steps, 2))
        return sample_block_codes(
            uniforms, self.tables.h, np.int64(self.tables.lo),
            gdx, gprob, goff, gcodes, gcdf,
        )


def _positions_from_codes(dist: StepDistribution, codes: np.ndarray, anchor) -> np.ndarray:
    pos = np.empty((codes.size + 1, 2), dtype=np.int64)
    pos[0] = anchor
    if codes.size:
        np.cumsum(dist.dxs[codes] , out=pos[1:, 0])
        np.cumsum(dist.dys[codes], out=pos[1:, 1])
        pos[1:, 0] += anchor[0]
        pos[1:, 1] += anchor[1]
    return pos


# ---------------------------------------------------------------------------
# event probability reports


@dataclass(frozen=True)
class Estimate:
    p: float
    lo: float
    hi: float
    samples: int


def _wilson_estimate(hits: int, trials: int, z: float = 1.96) -> Estimate:
    lo, hi = wilson_interval(hits, trials, z)
    return Estimate(p=hits / trials, lo=lo, hi=hi, samples=trials)


@dataclass(frozen=True)
class EventProbReport:
    m: int
    beta: float
    N: int
    p_B: Estimate
    p_E: Estimate
    p_I: Estimate
    p_eta_given_BB: Estimate
    p_B_exact: float  # from the backward table, zero Monte Carlo error


def estimate_event_probs(
    dist: StepDistribution,
    m: int,
    beta: float,
    N: int,
    seed: SeedRecord,
    r_m: float,
) -> EventProbReport:
    """Monte Carlo probabilities of the lower-bound events at block scale m.

    Marginal P(B), P(E), P(I ok) come from unconditioned blocks; the
    conditional P(eta = 1 | both blocks confined) is estimated from pairs
    drawn with the exact conditioned sampler and one free connector step.
    """
    if m < 8:
        raise ValueError("m must be at least 8")
    if N < 1000:
        raise ValueError("N must be at least 1000")
    if r_m <= 0:
        raise ValueError("r_m must be positive")
    log_m = math.log(m)
    thr_E = r_m * (1.0 - (beta / 2.0) / log_m)
    thr_I = r_m * (beta / 6.0) / log_m
    tables = confinement_tables(dist, m)

    # unconditioned marginals from N two-block paths
    rng = derive_rng(seed.child(0))
    hits_B = 0
    hits_E = 0
    hits_I = 0
    lo, hi, tlo, thi = _strip_bounds(m)
    for _ in range(N):
        codes = sample_step_codes(dist, 2 * m - 1, rng)
        pos = _positions_from_codes(dist, codes, (0, 0))
        keys = pack_sites(pos)
        relx = pos[:m, 0]
        if relx.min() >= lo and relx.max() <= hi and tlo <= relx[m - 1] <= thi:
            hits_B += 1
        left = np.unique(keys[:m])
        right = np.unique(keys[m : 2 * m])
        hits_E += int(left.size >= thr_E) + int(right.size >= thr_E)
        hits_I += int(np.intersect1d(left, right, assume_unique=True).size <= thr_I)

    # conditional eta given both blocks confined
    sampler = ConditionedBlockSampler(dist, tables)
    rng_c = derive_rng(seed.child(1))
    hits_eta = 0
    for _ in range(N):
        codes_a = sampler.sample(rng_c)
        pos_a = _positions_from_codes(dist, codes_a, (0, 0))
        conn = sample_step_codes(dist, 1, rng_c)[0]
        anchor_b = (
            int(pos_a[-1, 0] + dist.dxs[conn]),
            int(pos_a[-1, 1] + dist.dys[conn]),
        )
        codes_b = sampler.sample(rng_c)
        pos_b = _positions_from_codes(dist, codes_b, anchor_b)
        sites_a = np.unique(pack_sites(pos_a))
        sites_b = np.unique(pack_sites(pos_b))
        if sites_a.size >= thr_E and sites_b.size >= thr_E:
            if np.intersect1d(sites_a, sites_b, assume_unique=True).size <= thr_I:
                hits_eta += 1

    return EventProbReport(
        m=m, beta=beta, N=N,
        p_B=_wilson_estimate(hits_B, N),
        p_E=_wilson_estimate(hits_E, 2 * N),
        p_I=_wilson_estimate(hits_I, N),
        p_eta_given_BB=_wilson_estimate(hits_eta, N),
        p_B_exact=tables.p_exact,
    )


# ---------------------------------------------------------------------------
# full lower-bound strategy


def analyze_block_sites(site_arrays: list[np.ndarray]) -> tuple[int, int, int, int]:
    """(union size, sum of block ranges, sum of adjacent overlaps,
    non-adjacent sharing violations) for per-block unique site keys."""
    sizes = [a.size for a in site_arrays]
    neighbor = 0
    for a, b in zip(site_arrays, site_arrays[1:]):
        neighbor += int(np.intersect1d(a, b, assume_unique=True).size)
    keys = np.concatenate(site_arrays)
    labels = np.concatenate(
        [np.full(a.size, k, dtype=np.int64) for k, a in enumerate(site_arrays)]
    )
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    labels = labels[order]
    union = int(np.unique(keys).size)
    violations = 0
    start = 0
    for stop in np.flatnonzero(np.diff(keys) != 0) + 1:
        if stop - start > 1 and labels[start:stop].max() - labels[start:stop].min() > 1:
            violations += 1
        start = int(stop)
    if keys.size - start > 1 and labels[start:].max() - labels[start:].min() > 1:
        violations += 1
    return union, int(sum(sizes)), neighbor, violations


@dataclass(frozen=True)
class ImplicationReport:
    n: int
    theta: float
    beta: float
    m: int
    M: int
    samples: int
    implication_fraction: float   # share of samples with R_n >= theta * r_n_hat
    identity_violations: int      # union != sum ranges - sum adjacent overlaps
    disjoint_violations: int      # non-adjacent blocks sharing a site
    mean_range: float
    threshold: float              # theta * r_n_hat
    acceptance_rate: float        # of the E/I rejection stage
    eta_fraction: float           # per-pair eta indicator average over samples


def strategy_implication_check(
    dist: StepDistribution,
    n: int,
    theta: float,
    beta: float,
    N: int,
    seed: SeedRecord,
    r_m: float,
    r_n_hat: float,
    r_tail: float | None = None,
    max_attempts_per_block: int = 2000,
) -> ImplicationReport:
    """Build N paths satisfying every B, E and I event and check the claims.

    Blocks are drawn exactly conditioned on B and accepted block by block
    on their E event and the overlap event with the previous block, which
    keeps construction cost linear in M.  On the finished samples the
    report checks the range decomposition identity (integer equality),
    geometric disjointness of non-adjacent blocks, and the fraction where
    the full-path range clears theta * r_n_hat.
    """
    params = make_block_params("lower", n, theta, beta)
    m, M = params.m, params.M
    log_m = math.log(m)
    thr_E_full = r_m * (1.0 - (beta / 2.0) / log_m)
    thr_I = r_m * (beta / 6.0) / log_m
    tail_len = params.tail_len
    if r_tail is None:
        r_tail = min(r_m, float(tail_len))
    thr_E_tail = r_tail * (1.0 - (beta / 2.0) / log_m)

    full = ConditionedBlockSampler(dist, confinement_tables(dist, m))
    tail = (
        full
        if tail_len == m
        else ConditionedBlockSampler(
            dist, confinement_tables(dist, m, horizon=tail_len, endpoint=False)
        )
    )

    rng = derive_rng(seed)
    threshold = theta * r_n_hat
    implication_hits = 0
    identity_violations = 0
    disjoint_violations = 0
    eta_hits = 0
    eta_pairs = 0
    mean_range = 0.0
    attempts_total = 0
    accepts_total = 0

    for _ in range(N):
        site_arrays: list[np.ndarray] = []
        prev_sites = None
        anchor = (0, 0)
        last_pos = (0, 0)
        for k in range(1, M + 1):
            sampler = tail if k == M else full
            thr_E = thr_E_tail if k == M else thr_E_full
            accepted = None
            for attempt in range(max_attempts_per_block):
                attempts_total += 1
                if k > 1:
                    conn = sample_step_codes(dist, 1, rng)[0]
                    anchor = (
                        last_pos[0] + int(dist.dxs[conn]),
                        last_pos[1] + int(dist.dys[conn]),
                    )
                codes = sampler.sample(rng)
                pos = _positions_from_codes(dist, codes, anchor)
                sites = np.unique(pack_sites(pos))
                if sites.size < thr_E:
                    continue
                if prev_sites is not None:
                    overlap = np.intersect1d(prev_sites, sites, assume_unique=True).size
                    if overlap > thr_I:
                        continue
                    eta_pairs += 1
                    eta_hits += 1  # accepted pairs satisfy eta by construction
                accepted = (sites, pos)
                accepts_total += 1
                break
            if accepted is None:
                raise RejectionBudgetExceeded(
                    f"block {k} not accepted within {max_attempts_per_block} attempts "
                    f"(acceptance so far {accepts_total}/{attempts_total})"
                )
            sites, pos = accepted
            site_arrays.append(sites)
            prev_sites = sites
            last_pos = (int(pos[-1, 0]), int(pos[-1, 1]))
        union, total, neighbor, violations = analyze_block_sites(site_arrays)
        if union != total - neighbor:
            identity_violations += 1
        disjoint_violations += violations
        mean_range += union
        if union >= threshold:
            implication_hits += 1
        if attempts_total > 200 * M and accepts_total / attempts_total < MIN_CONDITIONAL_ACCEPTANCE:
            raise RejectionBudgetExceeded(
                f"acceptance rate {accepts_total / attempts_total:.2g} below "
                f"{MIN_CONDITIONAL_ACCEPTANCE}"
            )

    return ImplicationReport(
        n=n, theta=theta, beta=beta, m=m, M=M, samples=N,
        implication_fraction=implication_hits / N,
        identity_violations=identity_violations,
        disjoint_violations=disjoint_violations,
        mean_range=mean_range / N,
        threshold=threshold,
        acceptance_rate=accepts_total / max(attempts_total, 1),
        eta_fraction=eta_hits / max(eta_pairs, 1),
    )


def sample_confined_path_etas(
    dist: StepDistribution,
    params: BlockParams,
    seed: SeedRecord,
    r_m: float,
    N: int,
) -> np.ndarray:
    """Eta indicator matrix (N, M-1) under the law conditioned on all B.

    No E or I rejection here: this is the measure the one-dependence
    statement lives under.
    """
    m, M = params.m, params.M
    log_m = math.log(m)
    beta = params.beta
    thr_E = r_m * (1.0 - (beta / 2.0) / log_m)
    thr_I = r_m * (beta / 6.0) / log_m
    full = ConditionedBlockSampler(dist, confinement_tables(dist, m))
    rng = derive_rng(seed)
    etas = np.zeros((N, M - 1), dtype=bool)
    for i in range(N):
        sites = []
        anchor = (0, 0)
        last = (0, 0)
        for k in range(M):
            if k > 0:
                conn = sample_step_codes(dist, 1, rng)[0]
                anchor = (last[0] + int(dist.dxs[conn]), last[1] + int(dist.dys[conn]))
            codes = full.sample(rng)
            pos = _positions_from_codes(dist, codes, anchor)
            sites.append(np.unique(pack_sites(pos)))
            last = (int(pos[-1, 0]), int(pos[-1, 1]))
        ok_E = np.array([s.size >= thr_E for s in sites])
        for k in range(M - 1):
            overlap = np.intersect1d(sites[k], sites[k + 1], assume_unique=True).size
            etas[i, k] = ok_E[k] and ok_E[k + 1] and overlap <= thr_I
    return etas


def lower_bound_certificate(params: BlockParams, report: EventProbReport) -> float:
    """Log of the certified probability: M log p_B + M log(1/4).

    Valid once the conditional eta probability clears 3/4, via the
    one-dependent product bound.
    """
    if report.p_eta_given_BB.p <= 0.75:
        raise BoundNotApplicable(
            f"eta probability {report.p_eta_given_BB.p:.3f} not above 3/4"
        )
    if report.p_B.p <= 0.0:
        raise BoundNotApplicable("no confined blocks observed")
    return params.M * (math.log(report.p_B.p) + math.log(0.25))


# ---------------------------------------------------------------------------
# upper-bound probe


@dataclass(frozen=True)
class ChebyshevProbe:
    n: int
    theta: float
    beta: float
    lam: float
    m: int
    M: int
    bound: float            # exp(-lam*beta*M + M*mgf(lam)), the printed form
    bound_optimized: float  # exp(-M * conjugate(beta)) at the maximizing lambda
    lambda0: float
    bound_exact_margin: float  # exp(-lam*scale*(theta r_n - M r_m) + M*mgf(lam))
    direct_p_hat: float | None


def upper_chebyshev_probe(
    curve: LogMgfCurve,
    n: int,
    theta: float,
    beta: float,
    lam: float,
    r_n_hat: float,
    r_m_hat: float,
    direct: TailEstimate | None = None,
) -> ChebyshevProbe:
    """Exponential Chebyshev upper bound at upper-regime blocks.

    Reports the printed form exp(-lam beta M + M mgf(lam)), its optimum
    over lam, and the variant with the empirical threshold margin
    theta r_n - M r_m on the rescaled axis.  All three cap at 1.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    params = make_block_params("upper", n, theta, beta)
    m, M = params.m, params.M
    spline = _conjugate_interpolant(curve)
    mgf_at = float(spline(lam)) if lam > 0 else 0.0
    bound = math.exp(min(0.0, -lam * beta * M + M * mgf_at))
    lam_star, lam0 = legendre(curve, beta)
    bound_opt = math.exp(min(0.0, -M * lam_star))
    scale = math.log(m) ** 2 / m
    margin = theta * r_n_hat - M * r_m_hat
    bound_exact = math.exp(min(0.0, -lam * scale * margin + M * mgf_at))
    return ChebyshevProbe(
        n=n, theta=theta, beta=beta, lam=lam, m=m, M=M,
        bound=bound, bound_optimized=bound_opt, lambda0=lam0,
        bound_exact_margin=bound_exact,
        direct_p_hat=None if direct is None else direct.p_hat,
    )
