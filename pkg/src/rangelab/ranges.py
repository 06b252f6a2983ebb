"""Exact visited-site counts: full range, windows, block intersections.

Conventions: ``range_count`` counts the closed set {S_0, ..., S_n} while
windows are half open, R_{a,b} = card{S_a, ..., S_{b-1}}.  Both appear in
the block identities, so the off-by-one is part of the API contract here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import EmptyWindow, OutOfBounds
from .seeding import SeedRecord, derive_rng
from .walk import StepDistribution, WalkPath, sample_step_codes

_PACK_OFF = np.int64(2147483648)


@dataclass(frozen=True)
class RangeStat:
    n: int
    range: int


@dataclass(frozen=True)
class WindowRange:
    a: int
    b: int
    range: int


@dataclass(frozen=True)
class IntersectionStat:
    k: int
    m: int
    size: int


def pack_sites(positions: np.ndarray) -> np.ndarray:
    """uint64 keys of lattice points, one per row of ``positions``."""
    x = positions[:, 0].astype(np.int64) + _PACK_OFF
    y = positions[:, 1].astype(np.int64) + _PACK_OFF
    return (x.astype(np.uint64) << np.uint64(32)) | y.astype(np.uint64)


def window_sites(path: WalkPath, a: int, b: int) -> np.ndarray:
    """Sorted unique site keys of the half-open window [a, b)."""
    if a >= b:
        raise EmptyWindow(f"window [{a}, {b}) is empty")
    if a < 0 or b > path.n + 1:
        raise OutOfBounds(f"window [{a}, {b}) outside path of n = {path.n}")
    return np.unique(pack_sites(path.positions[a:b]))


def range_count(path: WalkPath) -> RangeStat:
    """Number of distinct sites among S_0, ..., S_n."""
    return RangeStat(n=path.n, range=int(np.unique(pack_sites(path.positions)).size))


def window_range(path: WalkPath, a: int, b: int) -> WindowRange:
    return WindowRange(a=a, b=b, range=int(window_sites(path, a, b).size))


def block_intersection(path: WalkPath, k: int, m: int) -> IntersectionStat:
    """Size of the overlap between block k and block k+1 (m sites each)."""
    if k < 1 or m < 1 or (k + 1) * m > path.n + 1:
        raise OutOfBounds(f"blocks ({k}, {k + 1}) of length {m} outside path")
    left = window_sites(path, (k - 1) * m, k * m)
    right = window_sites(path, k * m, (k + 1) * m)
    return IntersectionStat(k=k, m=m, size=int(np.intersect1d(left, right, assume_unique=True).size))


def centered_range(stat: RangeStat, r_n: float) -> float:
    return stat.range - r_n


class RangeAccumulator:
    """Streaming range of an arbitrarily long walk, fed by step-code chunks.

    Memory grows with the number of distinct sites only, so walks far above
    the in-memory path budget can be ranged chunk by chunk.
    """

    def __init__(self, dist: StepDistribution, capacity_hint: int = 1 << 16):
        self._adx = dist.dxs
        self._ady = dist.dys
        self._arena = _kernels.VisitArena(capacity_hint)
        self._gen = self._arena.next_gen()
        self._x = np.int64(0)
        self._y = np.int64(0)
        self._count = np.int64(-1)  # start site not yet inserted

    @property
    def count(self) -> int:
        return max(int(self._count), 0)

    def update(self, codes: np.ndarray) -> None:
        codes = np.ascontiguousarray(codes, dtype=np.uint8)
        while (max(self._count, 0) + codes.size + 1) * 2 > self._arena.size:
            self._gen = self._arena.grow_stream(self._gen, max(int(self._count), 0))
        self._x, self._y, self._count = _kernels.visit_count_resume(
            codes, self._adx, self._ady, self._arena.keys, self._arena.stamps,
            self._gen, self._x, self._y, self._count,
        )

    def result(self) -> int:
        if self._count < 0:
            # empty walk still occupies the origin
            self.update(np.empty(0, dtype=np.uint8))
        return int(self._count)


def sample_range_batch(
    dist: StepDistribution,
    n: int,
    N: int,
    rng: np.random.Generator,
    arena: _kernels.VisitArena | None = None,
    max_block_bytes: int = 1 << 26,
) -> np.ndarray:
    """Ranges of N independent walks of n steps, in draw order.

    The workhorse behind every Monte Carlo estimate here: step codes are
    drawn in batches and counted with the hashed-arena kernel.
    """
    if arena is None:
        arena = _kernels.VisitArena(n + 1)
    arena.ensure(n + 1)
    out = np.empty(N, dtype=np.int64)
    rows = max(1, min(N, max_block_bytes // max(n, 1)))
    done = 0
    adx, ady = dist.dxs, dist.dys
    while done < N:
        take = min(rows, N - done)
        codes = sample_step_codes(dist, take * n, rng).reshape(take, n)
        gen0 = arena.reserve(take)
        out[done : done + take] = _kernels.visit_count_batch(
            codes, adx, ady, arena.keys, arena.stamps, gen0
        )
        done += take
    return out


def range_of_codes(
    codes: np.ndarray, dist: StepDistribution, arena: _kernels.VisitArena
) -> int:
    """Range of one walk given its step codes (arena reused across calls)."""
    arena.ensure(codes.size + 1)
    return int(
        _kernels.visit_count(
            np.ascontiguousarray(codes, dtype=np.uint8),
            dist.dxs, dist.dys, arena.keys, arena.stamps, arena.next_gen(),
        )
    )


def crossing_step_of_codes(
    codes: np.ndarray, dist: StepDistribution, level: int, arena: _kernels.VisitArena
) -> int:
    """First step index whose prefix range exceeds ``level`` (-1 if none)."""
    arena.ensure(codes.size + 1)
    return int(
        _kernels.crossing_step(
            np.ascontiguousarray(codes, dtype=np.uint8),
            dist.dxs, dist.dys, arena.keys, arena.stamps, arena.next_gen(),
            np.int64(level),
        )
    )


def sample_ranges_seeded(dist: StepDistribution, n: int, N: int, seed: SeedRecord) -> np.ndarray:
    """Convenience wrapper binding ``sample_range_batch`` to a seed record."""
    return sample_range_batch(dist, n, N, derive_rng(seed))
