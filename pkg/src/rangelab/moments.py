"""Expected range three ways: asymptotic expansion, Monte Carlo, enumeration.

The Monte Carlo table is the centering authority for the other labs; the
two-term expansion is never silently substituted for it.  The enumeration
oracle walks every path of a short walk in rational arithmetic and is the
ground truth the sampling estimators are tested against.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import BudgetExceeded, DomainError
from .ranges import pack_sites, sample_range_batch
from .seeding import SeedRecord, derive_rng
from .stats import merge_moments, moments_of, stderr_of_moments
from .walk import CovarianceData, StepDistribution, covariance, sample_step_codes

MEAN_TABLE_COLUMNS = ("dist_id", "n", "N", "r_hat", "stderr", "master_seed")
DEFAULT_CHUNK_STEPS = 5 * 10**7  # per-subtask work, fixed so results never depend on worker count


@dataclass(frozen=True)
class MeanRangeEntry:
    n: int
    r_hat: float
    stderr: float
    samples: int
    expansion: float


@dataclass(frozen=True)
class ExactPmf:
    n: int
    pmf: dict  # range value -> exact probability (Fraction)

    @property
    def mean(self) -> Fraction:
        return sum((Fraction(r) * p for r, p in self.pmf.items()), Fraction(0))

    @property
    def total(self) -> Fraction:
        return sum(self.pmf.values(), Fraction(0))

    def tail(self, threshold: int) -> Fraction:
        return sum((p for r, p in self.pmf.items() if r >= threshold), Fraction(0))


def expansion_r(cov: CovarianceData, n: int) -> float:
    """Two-term expansion e1*n/log n + e1*n/log^2 n."""
    if n < 2:
        raise DomainError(f"expansion needs n >= 2, got {n}")
    ln = math.log(n)
    return cov.e1 * n / ln + cov.e1 * n / ln**2


def mean_chunk_sizes(n: int, N: int, chunk_steps: int = DEFAULT_CHUNK_STEPS) -> list[int]:
    """Deterministic split of N samples into subtask-sized chunks."""
    per = max(1, chunk_steps // max(n, 1))
    sizes = [per] * (N // per)
    if N % per:
        sizes.append(N % per)
    return sizes


def mean_chunk_moments(
    dist: StepDistribution, n: int, size: int, chunk_seed: SeedRecord
) -> tuple[int, float, float]:
    """Moments of one chunk of sampled ranges; the parallel unit of work."""
    values = sample_range_batch(dist, n, size, derive_rng(chunk_seed))
    return moments_of(values)


def mc_mean_range(
    dist: StepDistribution, n: int, N: int, seed: SeedRecord
) -> MeanRangeEntry:
    """Sample mean and standard error of R_n over N independent walks.

    Work is split into the same seed-derived chunks a parallel sweep would
    use, and merged in chunk order, so inline and pooled execution agree
    bit for bit.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    acc = (0, 0.0, 0.0)
    for j, size in enumerate(mean_chunk_sizes(n, N)):
        acc = merge_moments(acc, mean_chunk_moments(dist, n, size, seed.child(j)))
    exp = expansion_r(covariance(dist), n) if n >= 2 else float(n + 1)
    return MeanRangeEntry(
        n=n, r_hat=acc[1], stderr=stderr_of_moments(acc), samples=acc[0], expansion=exp
    )


def exact_pmf(dist: StepDistribution, n: int, budget: int = 10**8) -> ExactPmf:
    """Exact law of R_n by depth-first enumeration of all |atoms|^n paths.

    Memory stays O(n) via an undo stack of visited sites.  Probabilities
    are exact rationals; for a uniform step law only leaf counts are
    accumulated and weighted once at the end.
    """
    k = len(dist)
    if k**n > budget:
        raise BudgetExceeded(f"{k}**{n} paths exceed budget {budget}")
    weights = [a[2] if isinstance(a[2], Fraction) else Fraction(a[2]) for a in dist.atoms]
    uniform = len(set(weights)) == 1
    dxs = [a[0] for a in dist.atoms]
    dys = [a[1] for a in dist.atoms]

    counts: dict[int, int] = defaultdict(int)
    masses: dict[int, Fraction] = defaultdict(Fraction)
    visited = {(0, 0): 1}

    def descend(depth: int, x: int, y: int, rng_count: int, w: Fraction) -> None:
        if depth == n:
            if uniform:
                counts[rng_count] += 1
            else:
                masses[rng_count] += w
            return
        for i in range(k):
            nx, ny = x + dxs[i], y + dys[i]
            hits = visited.get((nx, ny), 0)
            visited[(nx, ny)] = hits + 1
            descend(depth + 1, nx, ny, rng_count + (hits == 0), w * weights[i] if not uniform else w)
            if hits == 0:
                del visited[(nx, ny)]
            else:
                visited[(nx, ny)] = hits

    descend(0, 0, 0, 1, Fraction(1))
    if uniform:
        leaf_weight = weights[0] ** n
        pmf = {r: c * leaf_weight for r, c in sorted(counts.items())}
    else:
        pmf = dict(sorted(masses.items()))
    return ExactPmf(n=n, pmf=pmf)


@dataclass(frozen=True)
class IntersectionMeanReport:
    m: int
    samples: int
    i_mean: float
    i_stderr: float
    identity_mean: float
    paired_z: float
    r_m_hat: float
    r_2m_hat: float
    asymptotic_ratio: float  # i_mean / (r_m_hat * 2 log 2 / log m); nan for m = 1


def intersection_mean_check(
    dist: StepDistribution, m: int, N: int, seed: SeedRecord
) -> IntersectionMeanReport:
    """Check E[overlap of two adjacent m-site windows] = 2 r_m - r_{2m}.

    Both sides are estimated from the same paths, so the per-path identity
    makes the paired difference exactly zero; the z-score is reported to
    document that.
    """
    if m < 1:
        raise ValueError("m must be positive")
    rng = derive_rng(seed)
    inter = np.empty(N, dtype=np.int64)
    r1 = np.empty(N, dtype=np.int64)
    r2 = np.empty(N, dtype=np.int64)
    r12 = np.empty(N, dtype=np.int64)
    steps = 2 * m - 1  # positions 0 .. 2m-1 cover both windows
    for i in range(N):
        codes = sample_step_codes(dist, steps, rng)
        pos = np.empty((steps + 1, 2), dtype=np.int64)
        pos[0] = 0
        np.cumsum(dist.dxs[codes], out=pos[1:, 0])
        np.cumsum(dist.dys[codes], out=pos[1:, 1])
        keys = pack_sites(pos)
        left = np.unique(keys[:m])
        right = np.unique(keys[m : 2 * m])
        r1[i] = left.size
        r2[i] = right.size
        r12[i] = np.unique(keys[: 2 * m]).size
        inter[i] = np.intersect1d(left, right, assume_unique=True).size

    identity = r1 + r2 - r12
    diff = (inter - identity).astype(np.float64)
    sd = diff.std(ddof=1) if N > 1 else 0.0
    z = 0.0 if sd == 0.0 else float(diff.mean() / (sd / math.sqrt(N)))
    i_mean = float(inter.mean())
    r_m_hat = float((r1.mean() + r2.mean()) / 2)
    ratio = math.nan
    if m > 1:
        ratio = i_mean / (r_m_hat * 2 * math.log(2) / math.log(m))
    return IntersectionMeanReport(
        m=m,
        samples=N,
        i_mean=i_mean,
        i_stderr=float(inter.std(ddof=1) / math.sqrt(N)) if N > 1 else 0.0,
        identity_mean=float(identity.mean()),
        paired_z=z,
        r_m_hat=r_m_hat,
        r_2m_hat=float(r12.mean()),
        asymptotic_ratio=ratio,
    )


class MeanRangeTable:
    """Disk-backed cache of mean-range estimates.

    One CSV row per (dist_id, n, N, master_seed); consumers pick the most
    precise entry available for a given walk and n.
    """

    def __init__(self, path: Path | str | None = None):
        self.path = Path(path) if path is not None else None
        self._rows: dict[tuple, tuple[float, float]] = {}
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path, newline="") as fh:
            for row in csv.DictReader(fh):
                key = (row["dist_id"], int(row["n"]), int(row["N"]), int(row["master_seed"]))
                self._rows[key] = (float(row["r_hat"]), float(row["stderr"]))

    def save(self) -> None:
        if self.path is None:
            raise ValueError("table has no backing path")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(MEAN_TABLE_COLUMNS)
            for key in sorted(self._rows):
                dist_id, n, N, master = key
                r_hat, stderr = self._rows[key]
                writer.writerow([dist_id, n, N, f"{r_hat:.17g}", f"{stderr:.17g}", master])

    def put(self, dist_id: str, n: int, N: int, master_seed: int, r_hat: float, stderr: float) -> None:
        self._rows[(dist_id, n, N, master_seed)] = (r_hat, stderr)

    def get(self, dist_id: str, n: int, N: int, master_seed: int):
        return self._rows.get((dist_id, n, N, master_seed))

    def best(self, dist_id: str, n: int):
        """(r_hat, stderr, N) of the highest-N entry for this walk and n."""
        candidates = [
            (key[2], val) for key, val in self._rows.items()
            if key[0] == dist_id and key[1] == n
        ]
        if not candidates:
            return None
        N, (r_hat, stderr) = max(candidates, key=lambda item: item[0])
        return r_hat, stderr, N

    def get_or_compute(
        self, dist: StepDistribution, n: int, N: int, seed: SeedRecord
    ) -> MeanRangeEntry:
        cached = self.get(dist.dist_id, n, N, seed.master_seed)
        exp = expansion_r(covariance(dist), n) if n >= 2 else float(n + 1)
        if cached is not None:
            return MeanRangeEntry(n=n, r_hat=cached[0], stderr=cached[1], samples=N, expansion=exp)
        entry = mc_mean_range(dist, n, N, seed)
        self.put(dist.dist_id, n, N, seed.master_seed, entry.r_hat, entry.stderr)
        if self.path is not None:
            self.save()
        return entry
