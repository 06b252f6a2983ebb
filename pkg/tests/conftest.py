from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import pytest

from rangelab import mc_mean_range, simple_walk
from rangelab.moments import MeanRangeEntry, mean_chunk_moments, mean_chunk_sizes
from rangelab.seeding import SeedRecord
from rangelab.stats import merge_moments, stderr_of_moments
from rangelab.walk import covariance


@pytest.fixture(scope="session")
def srw():
    return simple_walk()


def parallel_mean(dist, n: int, N: int, seed: SeedRecord, workers: int = 2) -> MeanRangeEntry:
    """Same chunk plan and merge order as mc_mean_range, but pooled."""
    sizes = mean_chunk_sizes(n, N)
    if workers <= 1 or len(sizes) == 1:
        return mc_mean_range(dist, n, N, seed)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(mean_chunk_moments, dist, n, size, seed.child(j))
            for j, size in enumerate(sizes)
        ]
        acc = (0, 0.0, 0.0)
        for fut in futures:
            acc = merge_moments(acc, fut.result())
    from rangelab.moments import expansion_r

    return MeanRangeEntry(
        n=n, r_hat=acc[1], stderr=stderr_of_moments(acc), samples=acc[0],
        expansion=expansion_r(covariance(dist), n),
    )
