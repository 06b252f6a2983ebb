"""Experiment configuration, validation diagnostics, and task planning.

One JSON document describes an experiment; CLI flags only override its
keys.  Every task carries a seed derived from the master seed and the
task's semantic label, so the plan is reproducible under any worker
count and stable when a sweep grows.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateBlocks, InvalidConfig
from .moments import expansion_r, mean_chunk_sizes
from .seeding import SeedRecord, task_seed
from .walk import StepDistribution, covariance, load_distribution

SUBCOMMANDS = ("mean", "clt", "mgf", "rate", "tail", "blocks", "report")


@dataclass
class ExperimentConfig:
    dist: object = "simple"          # name or {"atoms": [[dx, dy, p], ...]}
    master_seed: int = 0
    n_grid: list = field(default_factory=lambda: [1024, 4096, 16384])
    theta: float = 2.0
    beta: float = 1.0                # upper-regime probe
    block_beta: float = 5.5          # lower-regime construction
    beta_grid: list = field(default_factory=lambda: [4.0, 4.5, 5.0, 5.5, 6.0])
    mean_samples: int = 100_000
    clt_samples: int = 10_000
    tail_samples: int = 100_000      # naive estimator budget
    event_samples: int = 2_000
    implication_samples: int = 200
    particles: int = 1_000
    kill_fraction: float = 0.25
    replications: int = 10
    lambda_grid: dict = field(default_factory=lambda: {"start": 0.0, "stop": 5.0, "points": 101})
    tail_methods: list = field(default_factory=lambda: ["splitting"])
    workers: int = 1
    out_dir: str = "out"

    _SEMANTIC_EXCLUDE = ("workers", "out_dir")

    @classmethod
    def from_json(cls, path: Path | str) -> "ExperimentConfig":
        with open(path) as fh:
            raw = json.load(fh)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if "master_seed" not in raw:
            raise InvalidConfig("master_seed is mandatory; wall-clock seeding is not supported")
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def distribution(self) -> StepDistribution:
        return load_distribution(self.dist)

    def lambdas(self) -> np.ndarray:
        g = self.lambda_grid
        if isinstance(g, dict):
            return np.linspace(float(g["start"]), float(g["stop"]), int(g["points"]))
        return np.asarray(g, dtype=np.float64)

    def semantic_dict(self) -> dict:
        d = asdict(self)
        for key in self._SEMANTIC_EXCLUDE:
            d.pop(key, None)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def seed_for(self, *label) -> SeedRecord:
        return task_seed(int(self.master_seed), *label)


def validate(config: ExperimentConfig) -> list[tuple[str, str]]:
    """(level, message) diagnostics; level is "error" or "warning".

    Errors make ``run`` refuse the config; warnings flag regime
    violations, degenerate blocks and under-powered budgets before any
    compute is spent.
    """
    diags: list[tuple[str, str]] = []
    try:
        dist = config.distribution()
    except Exception as exc:  # noqa: BLE001 - reported as a diagnostic
        diags.append(("error", f"distribution: {exc}"))
        return diags

    if not config.n_grid:
        diags.append(("error", "n grid is empty"))
    elif any(b <= a for a, b in zip(config.n_grid, config.n_grid[1:])):
        diags.append(("error", "n grid must be strictly increasing"))
    if config.theta < 1:
        diags.append(("error", f"theta = {config.theta} below 1"))
    if not 0.0 < config.kill_fraction < 0.5:
        diags.append(("error", f"kill_fraction = {config.kill_fraction} outside (0, 1/2)"))
    for name in ("mean_samples", "clt_samples", "tail_samples", "event_samples",
                 "implication_samples", "particles", "replications"):
        if getattr(config, name) <= 0:
            diags.append(("error", f"{name} must be positive"))
    grid = config.lambdas()
    if grid.size and not np.any(grid == 0.0):
        diags.append(("error", "lambda grid must contain 0"))

    if diags and any(level == "error" for level, _ in diags):
        return diags

    cov = covariance(dist)
    for n in config.n_grid:
        if n >= 2 and config.theta * expansion_r(cov, n) > n:
            diags.append((
                "warning",
                f"regime: theta * expansion_r({n}) = "
                f"{config.theta * expansion_r(cov, n):.0f} > n (may reject at runtime)",
            ))
    from .blocks import make_block_params

    n_max = max(config.n_grid)
    for beta in list(config.beta_grid) + [config.block_beta]:
        try:
            make_block_params("lower", n_max, config.theta, float(beta))
        except DegenerateBlocks as exc:
            diags.append(("warning", f"beta = {beta}: {exc}"))
    if config.mean_samples < 10_000:
        diags.append(("warning", "mean_samples under 10^4 gives coarse centering"))
    if config.particles < 100:
        diags.append(("warning", "fewer than 100 particles per splitting replication"))
    return diags


@dataclass(frozen=True)
class Task:
    task_id: str
    kind: str
    params: dict
    seed: SeedRecord


def _mean_phase(config: ExperimentConfig, ns: list[int]) -> list[Task]:
    tasks = []
    for n in sorted(set(ns)):
        base = config.seed_for("mean", n, config.mean_samples)
        for j, size in enumerate(mean_chunk_sizes(n, config.mean_samples)):
            tasks.append(Task(
                task_id=f"mean/{n}/{j}",
                kind="mean_chunk",
                params={"n": n, "size": size, "chunk": j, "N": config.mean_samples},
                seed=base.child(j),
            ))
    return tasks


def _clt_phase(config: ExperimentConfig, ns: list[int], centering: dict) -> list[Task]:
    tasks = []
    for n in sorted(set(ns)):
        r_hat, stderr = centering[n]
        base = config.seed_for("clt", n, config.clt_samples)
        for j, size in enumerate(mean_chunk_sizes(n, config.clt_samples)):
            tasks.append(Task(
                task_id=f"clt/{n}/{j}",
                kind="clt_chunk",
                params={"n": n, "size": size, "chunk": j, "r_hat": r_hat, "stderr": stderr},
                seed=base.child(j),
            ))
    return tasks


def mgf_ns(config: ExperimentConfig) -> list[int]:
    """The two largest grid lengths: curve scale plus its doubling drift."""
    return sorted(set(config.n_grid))[-2:]


def blocks_mean_lengths(config: ExperimentConfig) -> list[int]:
    """Walk lengths whose mean range the blocks subcommand consumes."""
    from .blocks import make_block_params

    n_max = max(config.n_grid)
    ns = {n_max}
    for beta in list(config.beta_grid) + [config.block_beta]:
        try:
            params = make_block_params("lower", n_max, config.theta, float(beta))
        except DegenerateBlocks:
            continue
        ns.add(params.m)
        if params.tail_len >= 2:
            ns.add(params.tail_len)
    return sorted(ns)


def seed_plan(config: ExperimentConfig, subcommand: str, centering: dict | None = None) -> list[Task]:
    """Deterministic task list for one subcommand.

    Tasks that need mean-range values are planned once those values exist;
    ``centering`` carries them on the second planning pass.  The returned
    list is identical for identical (config, subcommand, centering).
    """
    if subcommand not in SUBCOMMANDS:
        raise InvalidConfig(f"unknown subcommand {subcommand!r}")
    ns = sorted(set(config.n_grid))
    if subcommand == "mean":
        return _mean_phase(config, ns)
    if subcommand == "clt":
        if centering is None:
            return _mean_phase(config, ns)
        return _clt_phase(config, ns, centering)
    if subcommand in ("mgf", "rate"):
        if centering is None:
            return _mean_phase(config, mgf_ns(config))
        return _clt_phase(config, mgf_ns(config), centering)
    if subcommand == "tail":
        if centering is None:
            return _mean_phase(config, ns)
        tasks = []
        for n in ns:
            r_hat, _ = centering[n]
            if "naive" in config.tail_methods:
                base = config.seed_for("tail-naive", n, config.theta, config.tail_samples)
                for j, size in enumerate(mean_chunk_sizes(n, config.tail_samples)):
                    tasks.append(Task(
                        task_id=f"tail/naive/{n}/{j}",
                        kind="naive_chunk",
                        params={"n": n, "size": size, "r_hat": r_hat, "theta": config.theta},
                        seed=base.child(j),
                    ))
            if "splitting" in config.tail_methods:
                base = config.seed_for(
                    "tail-split", n, config.theta, config.particles, config.replications
                )
                for rep in range(config.replications):
                    tasks.append(Task(
                        task_id=f"tail/splitting/{n}/{rep}",
                        kind="splitting_rep",
                        params={
                            "n": n, "rep": rep, "r_hat": r_hat, "theta": config.theta,
                            "particles": config.particles,
                            "kill_fraction": config.kill_fraction,
                        },
                        seed=base.child(rep),
                    ))
        return tasks
    if subcommand == "blocks":
        if centering is None:
            return _mean_phase(config, blocks_mean_lengths(config))
        from .blocks import make_block_params

        n_max = max(config.n_grid)
        tasks = []
        for beta in config.beta_grid:
            try:
                params = make_block_params("lower", n_max, config.theta, float(beta))
            except DegenerateBlocks:
                continue
            if params.m < 8:  # event estimation floor; confinement needs room
                continue
            tasks.append(Task(
                task_id=f"blocks/events/{beta}",
                kind="event_probs",
                params={
                    "m": params.m, "beta": float(beta), "N": config.event_samples,
                    "r_m": centering[params.m][0],
                },
                seed=config.seed_for("blocks-events", params.m, beta, config.event_samples),
            ))
        params = make_block_params("lower", n_max, config.theta, config.block_beta)
        base = config.seed_for(
            "blocks-impl", n_max, config.theta, config.block_beta, config.implication_samples
        )
        chunk = max(1, config.implication_samples // 20)
        done = 0
        j = 0
        while done < config.implication_samples:
            size = min(chunk, config.implication_samples - done)
            tasks.append(Task(
                task_id=f"blocks/impl/{j}",
                kind="implication_chunk",
                params={
                    "n": n_max, "theta": config.theta, "beta": config.block_beta,
                    "size": size, "r_m": centering[params.m][0],
                    "r_tail": centering[params.tail_len][0] if params.tail_len >= 2 else 1.0,
                    "r_n_hat": centering[n_max][0],
                },
                seed=base.child(j),
            ))
            done += size
            j += 1
        return tasks
    return []  # report: pure post-processing
