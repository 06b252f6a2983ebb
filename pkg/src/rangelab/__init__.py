"""Numerical laboratory for the range of planar lattice random walks.

Everything here is a pure function of an explicit seed record: sampling,
splitting, block conditioning and the sweep harness all reproduce bit for
bit at any worker count.
"""

from .seeding import SeedRecord, derive_rng
from .walk import (
    CovarianceData,
    StepDistribution,
    WalkPath,
    build_distribution,
    covariance,
    diagonal_walk,
    load_distribution,
    sample_path,
    simple_walk,
)
from .ranges import (
    IntersectionStat,
    RangeAccumulator,
    RangeStat,
    WindowRange,
    block_intersection,
    centered_range,
    range_count,
    sample_range_batch,
    window_range,
)
from .moments import (
    ExactPmf,
    MeanRangeEntry,
    MeanRangeTable,
    exact_pmf,
    expansion_r,
    intersection_mean_check,
    mc_mean_range,
)
from .rate import (
    LogMgfCurve,
    RateSolution,
    ScaledSampleSet,
    bootstrap_rate_constants,
    curve_from_values,
    legendre,
    log_mgf,
    scaled_samples,
    solve_rate_constants,
)
from .tail import (
    ExponentFit,
    TailEstimate,
    drift_strategy_floor,
    fit_exponent,
    naive_tail,
    splitting_tail,
    tail_threshold,
    theoretical_exponent,
)
from .blocks import (
    BlockParams,
    ChebyshevProbe,
    EventProbReport,
    ImplicationReport,
    block_pass_probability,
    estimate_event_probs,
    eval_B,
    eval_E,
    eval_I,
    lower_bound_certificate,
    make_block_params,
    strategy_implication_check,
    upper_chebyshev_probe,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
