"""Step distributions on the 2-d integer lattice and reproducible path sampling.

Admissible step laws are finite, symmetric, mean zero and genuinely
two-dimensional.  Probabilities given as rationals (``fractions.Fraction``
or strings like ``"1/4"``) are kept exact so that the enumeration oracle in
``moments`` can work in rational arithmetic.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, Union

import numpy as np

from .errors import (
    BudgetExceeded,
    NonzeroMean,
    NotSymmetric,
    OneDimensionalSupport,
    ProbabilitiesDoNotSumToOne,
)
from .seeding import SeedRecord, derive_rng

PROB_TOL = 1e-12
DEFAULT_PATH_BUDGET = 2**25  # positions held in memory per sampled path

Probability = Union[Fraction, float]


@dataclass(frozen=True)
class StepDistribution:
    """Validated step law.  Construct via :func:`build_distribution`."""

    atoms: tuple  # ((dx, dy, p), ...) sorted by (dx, dy)
    exact: bool   # True when every p is a Fraction

    @property
    def dxs(self) -> np.ndarray:
        return np.array([a[0] for a in self.atoms], dtype=np.int64)

    @property
    def dys(self) -> np.ndarray:
        return np.array([a[1] for a in self.atoms], dtype=np.int64)

    @property
    def probs(self) -> np.ndarray:
        return np.array([float(a[2]) for a in self.atoms], dtype=np.float64)

    @property
    def max_step(self) -> int:
        return int(max(max(abs(a[0]), abs(a[1])) for a in self.atoms))

    @property
    def dist_id(self) -> str:
        payload = json.dumps(
            [[a[0], a[1], str(a[2])] for a in self.atoms], separators=(",", ":")
        ).encode()
        return hashlib.sha256(payload).hexdigest()[:12]

    def __len__(self) -> int:
        return len(self.atoms)


@dataclass(frozen=True)
class CovarianceData:
    gamma: np.ndarray  # 2x2 step covariance
    det_gamma: float
    e1: float  # 2*pi*sqrt(det_gamma)


@dataclass(frozen=True)
class WalkPath:
    """Sampled trajectory with its seed provenance.

    ``positions`` has shape (n+1, 2) and starts at the origin.
    """

    positions: np.ndarray
    seed: SeedRecord
    dist_id: str

    @property
    def n(self) -> int:
        return self.positions.shape[0] - 1


def _as_probability(p) -> Probability:
    if isinstance(p, Fraction):
        return p
    if isinstance(p, str):
        return Fraction(p)
    if isinstance(p, int):
        return Fraction(p)
    if isinstance(p, float):
        return p
    raise TypeError(f"unsupported probability type: {type(p)!r}")


def build_distribution(atoms: Sequence[tuple]) -> StepDistribution:
    """Validate an atom list (dx, dy, p) and return the step law.

    Raises the specific rejection: ``ProbabilitiesDoNotSumToOne``,
    ``NonzeroMean``, ``NotSymmetric`` or ``OneDimensionalSupport``.
    """
    if not atoms:
        raise ValueError("atom list is empty")
    parsed = []
    seen = set()
    for dx, dy, p in atoms:
        dx, dy = int(dx), int(dy)
        if (dx, dy) in seen:
            raise ValueError(f"duplicate atom {(dx, dy)}")
        seen.add((dx, dy))
        prob = _as_probability(p)
        if prob <= 0 or prob > 1:
            raise ValueError(f"atom {(dx, dy)} has probability {p} outside (0, 1]")
        parsed.append((dx, dy, prob))
    if len(parsed) > 255:
        raise ValueError("at most 255 atoms are supported")

    exact = all(isinstance(a[2], Fraction) for a in parsed)
    total = sum(a[2] for a in parsed)
    if exact:
        if total != 1:
            raise ProbabilitiesDoNotSumToOne(f"probabilities sum to {total}")
    elif abs(float(total) - 1.0) > PROB_TOL:
        raise ProbabilitiesDoNotSumToOne(f"probabilities sum to {float(total)!r}")

    mean_x = sum(a[0] * a[2] for a in parsed)
    mean_y = sum(a[1] * a[2] for a in parsed)
    if not _is_zero(mean_x, exact) or not _is_zero(mean_y, exact):
        raise NonzeroMean(f"mean step is ({float(mean_x)}, {float(mean_y)})")

    by_vec = {(a[0], a[1]): a[2] for a in parsed}
    for (dx, dy), p in by_vec.items():
        q = by_vec.get((-dx, -dy))
        if q is None or not _is_zero(p - q, exact):
            raise NotSymmetric(f"atom {(dx, dy)} lacks a matching mirror atom")

    nonzero = [(a[0], a[1]) for a in parsed if (a[0], a[1]) != (0, 0)]
    if not nonzero or all(
        v[0] * nonzero[0][1] - v[1] * nonzero[0][0] == 0 for v in nonzero
    ):
        raise OneDimensionalSupport("support lies on one line through the origin")

    parsed.sort(key=lambda a: (a[0], a[1]))
    return StepDistribution(atoms=tuple(parsed), exact=exact)


def _is_zero(value, exact: bool) -> bool:
    return value == 0 if exact else abs(float(value)) <= PROB_TOL


def covariance(dist: StepDistribution) -> CovarianceData:
    """Step covariance, its determinant, and e1 = 2*pi*sqrt(det)."""
    p = dist.probs
    dx = dist.dxs.astype(np.float64)
    dy = dist.dys.astype(np.float64)
    gamma = np.array(
        [
            [np.sum(p * dx * dx), np.sum(p * dx * dy)],
            [np.sum(p * dx * dy), np.sum(p * dy * dy)],
        ]
    )
    det = float(gamma[0, 0] * gamma[1, 1] - gamma[0, 1] * gamma[1, 0])
    return CovarianceData(gamma=gamma, det_gamma=det, e1=float(2.0 * np.pi * np.sqrt(det)))


def sample_step_codes(dist: StepDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """n atom indices (uint8) drawn from the step law."""
    k = len(dist)
    if dist.exact and all(a[2] == Fraction(1, k) for a in dist.atoms):
        # uniform fast path: a single integer draw per step
        return rng.integers(0, k, size=n, dtype=np.uint8)
    cum = np.cumsum(dist.probs)
    cum[-1] = 1.0
    return np.searchsorted(cum, rng.random(n), side="right").astype(np.uint8)


def sample_path(
    dist: StepDistribution,
    n: int,
    seed: SeedRecord,
    budget: int = DEFAULT_PATH_BUDGET,
) -> WalkPath:
    """Path of n steps, deterministic in ``seed``.

    Raises ``BudgetExceeded`` for n above the in-memory position budget;
    use the streaming range accumulator for longer walks.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n + 1 > budget:
        raise BudgetExceeded(f"n+1 = {n + 1} positions exceed budget {budget}")
    rng = derive_rng(seed)
    codes = sample_step_codes(dist, n, rng)
    positions = np.empty((n + 1, 2), dtype=np.int64)
    positions[0] = 0
    np.cumsum(dist.dxs[codes], out=positions[1:, 0])
    np.cumsum(dist.dys[codes], out=positions[1:, 1])
    return WalkPath(positions=positions, seed=seed, dist_id=dist.dist_id)


def load_distribution(spec) -> StepDistribution:
    """Distribution from the JSON document form {"atoms": [[dx, dy, p], ...]}.

    ``p`` entries may be numbers or rational strings like "1/4".  The names
    "simple" and "diagonal" select the built-in laws.
    """
    if isinstance(spec, str):
        if spec == "simple":
            return simple_walk()
        if spec == "diagonal":
            return diagonal_walk()
        spec = json.loads(spec)
    if not isinstance(spec, dict) or "atoms" not in spec:
        raise ValueError('distribution spec must be {"atoms": [[dx, dy, p], ...]}')
    return build_distribution([tuple(a) for a in spec["atoms"]])


def simple_walk() -> StepDistribution:
    q = Fraction(1, 4)
    return build_distribution([(1, 0, q), (-1, 0, q), (0, 1, q), (0, -1, q)])


def diagonal_walk() -> StepDistribution:
    q = Fraction(1, 4)
    return build_distribution([(1, 1, q), (1, -1, q), (-1, 1, q), (-1, -1, q)])
