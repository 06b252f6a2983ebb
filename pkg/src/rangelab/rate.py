"""Empirical log-MGF of the rescaled centered range and its convex conjugate.

The samples are (log^2 n / n) * (R_n - r_hat_n); their log moment
generating function is estimated on a lambda grid with jackknife errors
and effective sample sizes, projected onto the convex cone for stability,
conjugated, and fed to the solver for the rate constants b0, beta0 and
the optimized prefactor (grid scan of exp(-(beta+1)) * conjugate, refined
by golden section).  The variational value is authoritative; the closed
form exp(-(beta0+1)) * b0 is kept as a cross-check.

The Chebyshev chain gives one valid bound per beta, so the best decay
constant is the supremum of exp(-(beta+1)) * conjugate(beta) over beta.
That interior stationary point satisfies d(conjugate)/d(beta) =
conjugate(beta), which is also how it is located numerically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq, lsq_linear
from scipy.special import logsumexp

from .errors import CenteringUnavailable, MaximizerAtBoundary, NoBracket, NonConvexCurve
from .moments import mean_chunk_sizes
from .ranges import sample_range_batch
from .seeding import SeedRecord, derive_rng
from .walk import StepDistribution

DEFAULT_LAMBDA_GRID = np.linspace(0.0, 5.0, 101)  # spacing 0.05
ESS_RELIABLE = 100.0
CENTERING_PRECISION = 0.01  # max stderr of the centering on the scaled axis


@dataclass(frozen=True)
class ScaledSampleSet:
    """Values of (log^2 n / n) * (R_n - centering)."""

    n: int
    values: np.ndarray
    centering: float
    centering_stderr: float
    centering_mode: str  # "mc_table" or "exact"

    @property
    def scale(self) -> float:
        return math.log(self.n) ** 2 / self.n


def scaled_samples(
    dist: StepDistribution,
    n: int,
    N: int,
    seed: SeedRecord,
    centering: tuple[float, float],
    centering_mode: str = "mc_table",
) -> ScaledSampleSet:
    """N rescaled centered ranges at length n.

    ``centering`` is (r_hat, stderr) from the mean table (or the exact
    oracle for tiny n).  Rejected when the centering noise is visible at
    the scaled resolution.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    r_hat, r_stderr = centering
    scale = math.log(n) ** 2 / n
    if r_stderr * scale >= CENTERING_PRECISION:
        raise CenteringUnavailable(
            f"centering stderr {r_stderr:.3g} too coarse at n={n}: "
            f"{r_stderr * scale:.3g} >= {CENTERING_PRECISION}"
        )
    parts = []
    for j, size in enumerate(mean_chunk_sizes(n, N)):
        parts.append(sample_range_batch(dist, n, size, derive_rng(seed.child(j))))
    values = scale * (np.concatenate(parts) - r_hat)
    assert values.min() > -scale * r_hat  # ranges are positive
    return ScaledSampleSet(
        n=n, values=values, centering=r_hat, centering_stderr=r_stderr,
        centering_mode=centering_mode,
    )


@dataclass(frozen=True)
class LogMgfCurve:
    lambda_grid: np.ndarray
    values: np.ndarray          # raw estimates, values[grid == 0] == 0 exactly
    stderr: np.ndarray          # delete-one jackknife
    ess: np.ndarray             # (sum w)^2 / sum w^2
    n_used: int
    N_used: int
    values_convex: np.ndarray   # least-squares convex projection
    convexity_gap: float        # max |projection - raw|
    flagged: np.ndarray         # ess below the reliability floor

    def convexity_violated(self) -> bool:
        """Raw curve bends the wrong way beyond jackknife noise."""
        tol = np.where(np.isfinite(self.stderr), self.stderr, np.inf) + 1e-9
        return bool(np.any(np.abs(self.values_convex - self.values) > tol))


def _extract_values(samples) -> tuple[np.ndarray, int]:
    if isinstance(samples, ScaledSampleSet):
        return np.asarray(samples.values, dtype=np.float64), samples.n
    return np.asarray(samples, dtype=np.float64), 0


def log_mgf(samples, lambda_grid: np.ndarray = DEFAULT_LAMBDA_GRID) -> LogMgfCurve:
    """Estimate lambda -> log mean(exp(lambda * value)) on the grid.

    Grid points whose effective sample size falls under the floor are
    flagged, never dropped; downstream consumers decide what to trust.
    """
    values, n_used = _extract_values(samples)
    grid = np.asarray(lambda_grid, dtype=np.float64)
    if values.size == 0:
        raise ValueError("no samples")
    if not np.any(grid == 0.0):
        raise ValueError("lambda grid must contain 0")
    N = values.size
    logN = math.log(N)
    est = np.empty(grid.size)
    err = np.empty(grid.size)
    ess = np.empty(grid.size)
    for i, lam in enumerate(grid):
        a = lam * values
        full = logsumexp(a)
        est[i] = full - logN
        ess[i] = math.exp(2 * full - logsumexp(2 * a))
        # delete-one jackknife of the log-mean
        with np.errstate(divide="ignore", invalid="ignore"):
            rest = full + np.log1p(-np.exp(np.minimum(a - full, 0.0)))
        loo = rest - math.log(N - 1)
        if np.all(np.isfinite(loo)):
            err[i] = math.sqrt((N - 1) / N * np.sum((loo - loo.mean()) ** 2))
        else:
            err[i] = math.inf
    proj = _convex_projection(grid, est)
    gap = float(np.max(np.abs(proj - est)))
    return LogMgfCurve(
        lambda_grid=grid, values=est, stderr=err, ess=ess,
        n_used=n_used, N_used=N, values_convex=proj, convexity_gap=gap,
        flagged=ess < ESS_RELIABLE,
    )


def _convex_projection(grid: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares convex fit: value/slope at the left end plus
    nonnegative kinks at interior nodes."""
    G = grid.size
    if G < 3:
        return y.copy()
    A = np.zeros((G, G))
    A[:, 0] = 1.0
    A[:, 1] = grid - grid[0]
    for j in range(1, G - 1):
        A[:, j + 1] = np.maximum(0.0, grid - grid[j])
    lo = np.full(G, 0.0)
    lo[:2] = -np.inf
    res = lsq_linear(A, y, bounds=(lo, np.full(G, np.inf)), tol=1e-14)
    return A @ res.x


def _golden_max(f, a: float, b: float, tol: float = 1e-11) -> tuple[float, float]:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = (a + b) / 2
    return x, f(x)


def _conjugate_interpolant(curve: LogMgfCurve):
    grid = curve.lambda_grid
    if grid.size >= 4:
        return CubicSpline(grid, curve.values_convex)  # not-a-knot ends
    return lambda x: np.interp(x, grid, curve.values_convex)


def legendre(curve: LogMgfCurve, beta: float) -> tuple[float, float]:
    """(conjugate value, maximizer) of beta*lambda - curve at ``beta``.

    Grid scan plus golden-section refinement between the bracketing grid
    points of a convex interpolant.  A maximizer pinned to the top of the
    grid raises ``MaximizerAtBoundary``: the grid must be extended.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    grid = curve.lambda_grid
    spline = _conjugate_interpolant(curve)
    objective = beta * grid - curve.values_convex
    i_best = int(np.argmax(objective))
    if i_best == grid.size - 1:
        raise MaximizerAtBoundary(f"maximizer for beta={beta} at lambda grid edge {grid[-1]}")
    lo = grid[max(i_best - 1, 0)]
    hi = grid[min(i_best + 1, grid.size - 1)]
    lam0, val = _golden_max(lambda lam: beta * lam - float(spline(lam)), lo, hi)
    if val < objective[i_best]:
        lam0, val = float(grid[i_best]), float(objective[i_best])
    return float(val), float(lam0)


@dataclass(frozen=True)
class RateSolution:
    beta_grid: np.ndarray
    lambda_star: np.ndarray
    lambda0: np.ndarray
    b0: float
    beta0: float                 # slope of the curve at b0
    tilde_lambda_direct: float   # optimized exp(-(beta+1)) * conjugate over beta
    tilde_lambda_closed: float   # exp(-(beta0+1)) * b0
    beta0_direct: float          # beta achieving the optimum
    residual: float              # |direct - closed| / direct
    optimality_residual: float   # |d(conjugate)/d(beta) - conjugate| / conjugate at beta0_direct


def solve_rate_constants(
    curve: LogMgfCurve, beta_grid: np.ndarray | None = None
) -> RateSolution:
    """Solve for b0, beta0 and the optimized prefactor from one curve.

    b0 solves value(b) = b * (slope(b) - 1) by bracketed root finding with
    three-point central differences for the slope; the direct prefactor
    comes from a grid scan of exp(-(beta+1)) * conjugate(beta) refined by
    golden section.
    """
    if curve.convexity_violated():
        raise NonConvexCurve(
            f"projection moved the curve by {curve.convexity_gap:.3g}, beyond noise"
        )
    grid = curve.lambda_grid
    vals = curve.values_convex
    if grid.size < 5:
        raise NoBracket("lambda grid too short")
    spline = _conjugate_interpolant(curve)

    # slope on the grid by central differences, one-sided at the ends
    d = np.gradient(vals, grid, edge_order=2)

    def slope(b: float) -> float:
        return float(np.interp(b, grid, d))

    def g(b: float) -> float:
        return float(spline(b)) - b * (slope(b) - 1.0)

    positive = grid > 0
    g_grid = np.array([g(b) for b in grid[positive]])
    signs = np.sign(g_grid)
    bracket = None
    for i in range(g_grid.size - 1):
        if signs[i] > 0 and signs[i + 1] <= 0:
            bracket = (grid[positive][i], grid[positive][i + 1])
            break
    if bracket is None:
        raise NoBracket("value(b) - b*(slope(b)-1) does not change sign on the grid")
    b0 = float(brentq(g, bracket[0], bracket[1], xtol=1e-12))
    beta0 = slope(b0)

    if beta_grid is None:
        top = max(0.9 * float(d.max()), float(d[min(2, d.size - 1)]))
        beta_grid = np.linspace(max(1e-3, 0.02 * top), top, 160)
    beta_grid = np.asarray(beta_grid, dtype=np.float64)

    lam_star = np.empty(beta_grid.size)
    lam0 = np.empty(beta_grid.size)
    for i, beta in enumerate(beta_grid):
        lam_star[i], lam0[i] = legendre(curve, float(beta))

    def direct(beta: float) -> float:
        return math.exp(-(beta + 1.0)) * legendre(curve, beta)[0]

    direct_grid = np.exp(-(beta_grid + 1.0)) * lam_star
    j = int(np.argmax(direct_grid))
    lo = float(beta_grid[max(j - 1, 0)])
    hi = float(beta_grid[min(j + 1, beta_grid.size - 1)])
    beta0_direct, tilde_direct = _golden_max(direct, lo, hi)
    if tilde_direct < direct_grid[j]:
        beta0_direct, tilde_direct = float(beta_grid[j]), float(direct_grid[j])

    tilde_closed = math.exp(-(beta0 + 1.0)) * b0
    residual = abs(tilde_direct - tilde_closed) / tilde_direct if tilde_direct else math.inf

    h = max(1e-4, 1e-3 * beta0_direct)
    lam_star_0 = legendre(curve, beta0_direct)[0]
    dstar = (legendre(curve, beta0_direct + h)[0] - legendre(curve, beta0_direct - h)[0]) / (2 * h)
    opt_res = abs(dstar - lam_star_0) / lam_star_0 if lam_star_0 else math.inf

    return RateSolution(
        beta_grid=beta_grid, lambda_star=lam_star, lambda0=lam0,
        b0=b0, beta0=float(beta0),
        tilde_lambda_direct=float(tilde_direct), tilde_lambda_closed=float(tilde_closed),
        beta0_direct=float(beta0_direct), residual=float(residual),
        optimality_residual=float(opt_res),
    )


def curve_from_values(
    lambda_grid: np.ndarray, values: np.ndarray, stderr: float | np.ndarray = 0.0
) -> LogMgfCurve:
    """Curve built from known values, for fixtures and cross-checks."""
    grid = np.asarray(lambda_grid, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64)
    err = np.broadcast_to(np.asarray(stderr, dtype=np.float64), grid.shape).copy()
    proj = _convex_projection(grid, vals)
    return LogMgfCurve(
        lambda_grid=grid, values=vals, stderr=err,
        ess=np.full(grid.shape, math.inf), n_used=0, N_used=0,
        values_convex=proj, convexity_gap=float(np.max(np.abs(proj - vals))),
        flagged=np.zeros(grid.shape, dtype=bool),
    )


def bootstrap_rate_constants(
    samples, lambda_grid: np.ndarray, n_boot: int, seed: SeedRecord
) -> list[tuple[float, float]]:
    """(b0, direct prefactor) pairs over bootstrap resamples of the data."""
    values, _ = _extract_values(samples)
    rng = derive_rng(seed)
    out = []
    for _ in range(n_boot):
        pick = rng.integers(0, values.size, size=values.size)
        curve = log_mgf(values[pick], lambda_grid)
        try:
            sol = solve_rate_constants(curve)
            out.append((sol.b0, sol.tilde_lambda_direct))
        except (NoBracket, NonConvexCurve, MaximizerAtBoundary):
            continue
    return out
