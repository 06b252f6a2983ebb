"""Sweep execution: worker pool, manifest, resume, artifact CSV/JSON files.

Per-task payloads are persisted as JSON keyed by the task id; the final
artifacts are regenerated from payloads in canonical order on every run.
Reruns with the same config therefore recompute nothing and rewrite
byte-identical files at any worker count.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import blocks as blocks_mod
from .config import ExperimentConfig, Task, blocks_mean_lengths, mgf_ns, seed_plan, validate
from .errors import InvalidConfig, PartialFailure
from .moments import MeanRangeTable, expansion_r, mean_chunk_sizes
from .rate import log_mgf, scaled_samples, solve_rate_constants
from .ranges import sample_range_batch
from .seeding import derive_rng
from .stats import merge_moments, sample_skewness, stderr_of_moments, t_interval
from .tail import ExponentFit, TailEstimate, fit_exponent, tail_threshold
from .walk import covariance

FLOAT_FMT = "{:.17g}"


def _fmt(x) -> str:
    if isinstance(x, float):
        return FLOAT_FMT.format(x)
    return str(x)


def _payload_checksum(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RunResult:
    ok: bool
    computed: int
    cached: int
    failed: dict
    artifacts: list


class Manifest:
    def __init__(self, path: Path, config_hash: str):
        self.path = path
        self.config_hash = config_hash
        self.completed: dict[str, str] = {}
        self.failed: dict[str, str] = {}
        if path.exists():
            data = json.loads(path.read_text())
            if data.get("config_hash") == config_hash:
                self.completed = data.get("completed", {})

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        body = {
            "config_hash": self.config_hash,
            "completed": dict(sorted(self.completed.items())),
            "failed": dict(sorted(self.failed.items())),
        }
        self.path.write_text(json.dumps(body, indent=1, sort_keys=True) + "\n")


def _task_file(out: Path, task_id: str) -> Path:
    return out / "tasks" / (task_id.replace("/", "__") + ".json")


# ---------------------------------------------------------------------------
# task execution (top level so worker processes can import it)


def execute_task(config_dict: dict, task_id: str, kind: str, params: dict, seed) -> dict:
    config = ExperimentConfig.from_dict(config_dict)
    dist = config.distribution()
    if kind == "mean_chunk":
        values = sample_range_batch(dist, params["n"], params["size"], derive_rng(seed))
        mean = float(values.mean())
        return {
            "count": int(values.size),
            "mean": mean,
            "m2": float(np.sum((values - mean) ** 2)),
        }
    if kind == "clt_chunk":
        n = params["n"]
        values = sample_range_batch(dist, n, params["size"], derive_rng(seed))
        scale = math.log(n) ** 2 / n
        return {"values": [float(v) for v in scale * (values - params["r_hat"])]}
    if kind == "naive_chunk":
        thr = tail_threshold(params["theta"], params["r_hat"])
        ranges = sample_range_batch(dist, params["n"], params["size"], derive_rng(seed))
        return {
            "size": params["size"],
            "threshold": thr,
            "hits": {str(off): int(np.count_nonzero(ranges >= thr + off)) for off in (-1, 0, 1)},
            "work": params["size"] * params["n"],
        }
    if kind == "splitting_rep":
        from .tail import _splitting_replication

        thr = tail_threshold(params["theta"], params["r_hat"])
        estimates, work = _splitting_replication(
            dist, params["n"], [thr - 1, thr, thr + 1], params["particles"],
            params["kill_fraction"], derive_rng(seed), 200_000,
        )
        return {
            "threshold": thr,
            "estimates": {str(k): float(v) for k, v in estimates.items()},
            "work": int(work),
        }
    if kind == "event_probs":
        report = blocks_mod.estimate_event_probs(
            dist, params["m"], params["beta"], params["N"], seed, params["r_m"]
        )
        out = {"m": report.m, "beta": report.beta, "N": report.N, "p_B_exact": report.p_B_exact}
        for name in ("p_B", "p_E", "p_I", "p_eta_given_BB"):
            est = getattr(report, name)
            out[name] = {"p": est.p, "lo": est.lo, "hi": est.hi, "samples": est.samples}
        return out
    if kind == "implication_chunk":
        report = blocks_mod.strategy_implication_check(
            dist, params["n"], params["theta"], params["beta"], params["size"], seed,
            r_m=params["r_m"], r_n_hat=params["r_n_hat"], r_tail=params["r_tail"],
        )
        return {
            "samples": report.samples,
            "hits": int(round(report.implication_fraction * report.samples)),
            "identity_violations": report.identity_violations,
            "disjoint_violations": report.disjoint_violations,
            "mean_range": report.mean_range,
            "m": report.m, "M": report.M,
            "acceptance_rate": report.acceptance_rate,
            "eta_fraction": report.eta_fraction,
            "threshold": report.threshold,
        }
    raise InvalidConfig(f"unknown task kind {kind!r}")


def _run_phase(config: ExperimentConfig, tasks: list[Task], manifest: Manifest, out: Path):
    """Execute missing tasks (retrying once), persist payloads, return stats."""
    todo = [t for t in tasks if t.task_id not in manifest.completed]
    cached = len(tasks) - len(todo)
    computed = 0
    config_dict = config.semantic_dict() | {"workers": config.workers, "out_dir": config.out_dir}

    def submit_all(pool):
        futures = {}
        for t in todo:
            futures[t.task_id] = pool.submit(
                execute_task, config_dict, t.task_id, t.kind, t.params, t.seed
            )
        return futures

    results: dict[str, dict] = {}
    if todo:
        if config.workers > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                futures = submit_all(pool)
                for t in todo:
                    try:
                        results[t.task_id] = futures[t.task_id].result()
                    except Exception:
                        try:  # one retry, inline
                            results[t.task_id] = execute_task(
                                config_dict, t.task_id, t.kind, t.params, t.seed
                            )
                        except Exception as exc:  # noqa: BLE001
                            manifest.failed[t.task_id] = repr(exc)
        else:
            for t in todo:
                attempt = 0
                while True:
                    try:
                        results[t.task_id] = execute_task(
                            config_dict, t.task_id, t.kind, t.params, t.seed
                        )
                        break
                    except Exception as exc:  # noqa: BLE001
                        attempt += 1
                        if attempt >= 2:
                            manifest.failed[t.task_id] = repr(exc)
                            break
    for t in todo:
        if t.task_id in results:
            payload = results[t.task_id]
            path = _task_file(out, t.task_id)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(payload, sort_keys=True) + "\n")
            manifest.completed[t.task_id] = _payload_checksum(payload)
            computed += 1
    manifest.save()
    return computed, cached


def _load_payload(out: Path, task_id: str) -> dict:
    return json.loads(_task_file(out, task_id).read_text())


def _reduce_mean(config: ExperimentConfig, out: Path, ns: list[int]) -> dict:
    """Merge mean chunks in chunk order; persist the mean table CSV."""
    dist = config.distribution()
    cov = covariance(dist)
    table = MeanRangeTable(out / "mean_table.csv")
    centering = {}
    for n in sorted(set(ns)):
        acc = (0, 0.0, 0.0)
        for j, _ in enumerate(mean_chunk_sizes(n, config.mean_samples)):
            p = _load_payload(out, f"mean/{n}/{j}")
            acc = merge_moments(acc, (p["count"], p["mean"], p["m2"]))
        stderr = stderr_of_moments(acc)
        table.put(dist.dist_id, n, config.mean_samples, int(config.master_seed), acc[1], stderr)
        centering[n] = (acc[1], stderr)
    table.save()
    return centering


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def run(config: ExperimentConfig, subcommand: str) -> RunResult:
    """Execute one subcommand end to end; idempotent under resume."""
    diags = validate(config)
    errors = [msg for level, msg in diags if level == "error"]
    if errors:
        raise InvalidConfig("; ".join(errors))
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out / "manifest.json", config.config_hash())
    artifacts: list[str] = []
    computed = cached = 0

    if subcommand == "report":
        from .report import render_report

        artifacts = render_report(out)
        return RunResult(ok=True, computed=0, cached=0, failed={}, artifacts=artifacts)

    # phase 1: mean-range prerequisites
    phase1 = seed_plan(config, subcommand, centering=None)
    c1, k1 = _run_phase(config, phase1, manifest, out)
    computed += c1
    cached += k1
    if manifest.failed:
        raise PartialFailure(f"{len(manifest.failed)} tasks failed: {sorted(manifest.failed)}")

    ns_needed = {
        "mean": sorted(set(config.n_grid)),
        "clt": sorted(set(config.n_grid)),
        "mgf": mgf_ns(config),
        "rate": mgf_ns(config),
        "tail": sorted(set(config.n_grid)),
        "blocks": blocks_mean_lengths(config),
    }[subcommand]
    centering = _reduce_mean(config, out, ns_needed)
    artifacts.append("mean_table.csv")

    # phase 2: subcommand-specific work
    phase2 = seed_plan(config, subcommand, centering=centering)
    if phase2 != phase1:
        c2, k2 = _run_phase(config, phase2, manifest, out)
        computed += c2
        cached += k2
        if manifest.failed:
            raise PartialFailure(f"{len(manifest.failed)} tasks failed: {sorted(manifest.failed)}")

    artifacts += _reduce_subcommand(config, subcommand, out, centering)
    return RunResult(ok=True, computed=computed, cached=cached, failed={}, artifacts=artifacts)


def _reduce_subcommand(config, subcommand, out: Path, centering) -> list[str]:
    dist = config.distribution()
    cov = covariance(dist)
    artifacts: list[str] = []

    if subcommand == "mean":
        rows = []
        for n in sorted(set(config.n_grid)):
            r_hat, stderr = centering[n]
            one = cov.e1 * n / math.log(n) if n >= 2 else float(n + 1)
            rows.append([dist.dist_id, n, config.mean_samples, r_hat, stderr,
                         expansion_r(cov, n) if n >= 2 else float(n + 1), one,
                         int(config.master_seed)])
        _write_csv(out / "mean_summary.csv",
                   ["dist_id", "n", "N", "r_hat", "stderr", "expansion", "one_term", "master_seed"],
                   rows)
        artifacts.append("mean_summary.csv")

    if subcommand in ("clt", "mgf", "rate"):
        ns = sorted(set(config.n_grid)) if subcommand == "clt" else mgf_ns(config)
        per_n = {}
        for n in ns:
            vals: list[float] = []
            for j, _ in enumerate(mean_chunk_sizes(n, config.clt_samples)):
                vals.extend(_load_payload(out, f"clt/{n}/{j}")["values"])
            per_n[n] = np.array(vals)
            _write_csv(out / f"scaled_samples_n{n}.csv", ["value"], [[v] for v in vals])
            artifacts.append(f"scaled_samples_n{n}.csv")
        from scipy.stats import ks_2samp

        rows = []
        prev = None
        for n in ns:
            v = per_n[n]
            ks = ks_2samp(per_n[prev], v).statistic if prev is not None else float("nan")
            rows.append([n, v.size, float(v.mean()), float(v.std(ddof=1)),
                         sample_skewness(v), ks])
            prev = n
        _write_csv(out / "clt_summary.csv",
                   ["n", "N", "mean", "sd", "skewness", "ks_vs_previous"], rows)
        artifacts.append("clt_summary.csv")

        if subcommand in ("mgf", "rate"):
            grid = config.lambdas()
            curves = {n: log_mgf(per_n[n], grid) for n in ns}
            top = max(ns)
            curve = curves[top]
            _write_csv(out / "mgf_curve.csv", ["lambda", "value", "stderr", "ess"],
                       [[grid[i], curve.values[i], curve.stderr[i], curve.ess[i]]
                        for i in range(grid.size)])
            artifacts.append("mgf_curve.csv")
            if len(ns) == 2:
                a, b = curves[ns[0]], curves[ns[1]]
                ok = np.isfinite(a.stderr) & np.isfinite(b.stderr) & ~a.flagged & ~b.flagged
                drift = float(np.max(np.abs(a.values[ok] - b.values[ok]))) if ok.any() else float("nan")
                (out / "mgf_drift.json").write_text(json.dumps({
                    "n_small": ns[0], "n_large": ns[1],
                    "max_abs_drift_reliable": drift,
                }, indent=1, sort_keys=True) + "\n")
                artifacts.append("mgf_drift.json")

        if subcommand == "rate":
            sol = solve_rate_constants(curves[max(ns)])
            (out / "rate_solution.json").write_text(json.dumps({
                "b0": sol.b0, "beta0": sol.beta0,
                "tilde_lambda_direct": sol.tilde_lambda_direct,
                "tilde_lambda_closed": sol.tilde_lambda_closed,
                "residual": sol.residual,
                "beta0_direct": sol.beta0_direct,
                "optimality_residual": sol.optimality_residual,
            }, indent=1, sort_keys=True) + "\n")
            _write_csv(out / "rate_curve.csv", ["beta", "lambda_star", "lambda0"],
                       [[sol.beta_grid[i], sol.lambda_star[i], sol.lambda0[i]]
                        for i in range(sol.beta_grid.size)])
            artifacts += ["rate_solution.json", "rate_curve.csv"]

    if subcommand == "tail":
        estimates = _collect_tail_estimates(config, out, centering)
        rows = [[dist.dist_id, e.n, e.theta, e.method, e.p_hat, e.ci_low, e.ci_high,
                 e.work, int(config.master_seed)] for e in estimates]
        _write_csv(out / "tail_estimates.csv",
                   ["dist_id", "n", "theta", "method", "p_hat", "ci_low", "ci_high",
                    "work", "master_seed"], rows)
        artifacts.append("tail_estimates.csv")
        for method in config.tail_methods:
            subset = [e for e in estimates if e.method == method]
            try:
                fit = fit_exponent(subset, config.theta)
            except Exception as exc:  # noqa: BLE001 - recorded, not fatal
                (out / f"exponent_fit_{method}.json").write_text(
                    json.dumps({"error": repr(exc)}, indent=1) + "\n")
                artifacts.append(f"exponent_fit_{method}.json")
                continue
            (out / f"exponent_fit_{method}.json").write_text(json.dumps({
                "theta": fit.theta, "n_grid": [int(v) for v in fit.n_grid],
                "slope": fit.slope, "intercept": fit.intercept,
                "slope_stderr": fit.slope_stderr, "predicted": fit.predicted,
                "c_low_emp": fit.c_low_emp, "c_up_emp": fit.c_up_emp,
            }, indent=1, sort_keys=True) + "\n")
            artifacts.append(f"exponent_fit_{method}.json")

    if subcommand == "blocks":
        artifacts += _reduce_blocks(config, out, centering)

    return artifacts


def _collect_tail_estimates(config, out: Path, centering) -> list[TailEstimate]:
    from .stats import wilson_interval

    estimates = []
    for n in sorted(set(config.n_grid)):
        r_hat, _ = centering[n]
        if "naive" in config.tail_methods:
            hits = {-1: 0, 0: 0, 1: 0}
            total = 0
            work = 0
            thr = tail_threshold(config.theta, r_hat)
            for j, _size in enumerate(mean_chunk_sizes(n, config.tail_samples)):
                p = _load_payload(out, f"tail/naive/{n}/{j}")
                for off in (-1, 0, 1):
                    hits[off] += p["hits"][str(off)]
                total += p["size"]
                work += p["work"]
            lo, hi = wilson_interval(hits[0], total)
            ph = hits[0] / total
            estimates.append(TailEstimate(
                n=n, theta=config.theta, p_hat=ph, ci_low=min(lo, ph), ci_high=max(hi, ph),
                method="naive", work=work, threshold=thr,
                sensitivity={-1: hits[-1] / total, 1: hits[1] / total},
            ))
        if "splitting" in config.tail_methods:
            thr = tail_threshold(config.theta, r_hat)
            per = {thr - 1: [], thr: [], thr + 1: []}
            work = 0
            for rep in range(config.replications):
                p = _load_payload(out, f"tail/splitting/{n}/{rep}")
                for t in per:
                    per[t].append(p["estimates"][str(t)])
                work += p["work"]
            mean, lo, hi = t_interval(np.array(per[thr]))
            mean = min(max(mean, 0.0), 1.0)
            estimates.append(TailEstimate(
                n=n, theta=config.theta, p_hat=mean,
                ci_low=min(max(lo, 0.0), mean), ci_high=min(max(hi, mean), 1.0),
                method="splitting", work=work, threshold=thr,
                sensitivity={-1: float(np.mean(per[thr - 1])), 1: float(np.mean(per[thr + 1]))},
            ))
    return estimates


def _reduce_blocks(config, out: Path, centering) -> list[str]:
    from .blocks import make_block_params

    dist = config.distribution()
    n_max = max(config.n_grid)
    rows = []
    event_reports = {}
    for beta in config.beta_grid:
        try:
            params = make_block_params("lower", n_max, config.theta, float(beta))
        except Exception:  # degenerate; skipped at planning
            continue
        if params.m < 8:
            continue
        p = _load_payload(out, f"blocks/events/{beta}")
        event_reports[float(beta)] = p
        rows.append([dist.dist_id, "lower", n_max, config.theta, beta, params.m, params.M,
                     int(config.master_seed),
                     p["p_B"]["p"], p["p_B"]["lo"], p["p_B"]["hi"], p["p_B_exact"],
                     p["p_E"]["p"], p["p_I"]["p"],
                     p["p_eta_given_BB"]["p"], p["p_eta_given_BB"]["lo"], p["p_eta_given_BB"]["hi"]])
    _write_csv(out / "event_probs.csv",
               ["dist_id", "regime", "n", "theta", "beta", "m", "M", "master_seed",
                "p_B", "p_B_lo", "p_B_hi", "p_B_exact", "p_E", "p_I",
                "p_eta", "p_eta_lo", "p_eta_hi"], rows)
    artifacts = ["event_probs.csv"]

    # merge implication chunks
    total = hits = idv = djv = 0
    mean_range = 0.0
    eta_fr = []
    acc = []
    m = M = 0
    threshold = 0.0
    j = 0
    while _task_file(out, f"blocks/impl/{j}").exists():
        p = _load_payload(out, f"blocks/impl/{j}")
        total += p["samples"]
        hits += p["hits"]
        idv += p["identity_violations"]
        djv += p["disjoint_violations"]
        mean_range += p["mean_range"] * p["samples"]
        eta_fr.append(p["eta_fraction"])
        acc.append(p["acceptance_rate"])
        m, M, threshold = p["m"], p["M"], p["threshold"]
        j += 1
    if total:
        impl = {
            "n": n_max, "theta": config.theta, "beta": config.block_beta,
            "m": m, "M": M, "samples": total,
            "implication_fraction": hits / total,
            "identity_violations": idv,
            "disjoint_violations": djv,
            "mean_range": mean_range / total,
            "threshold": threshold,
            "acceptance_rate": float(np.mean(acc)),
            "eta_fraction": float(np.mean(eta_fr)),
        }
        (out / "implication.json").write_text(json.dumps(impl, indent=1, sort_keys=True) + "\n")
        artifacts.append("implication.json")

        # certificate at the construction beta, if its event report exists
        beta = float(config.block_beta)
        if beta in event_reports:
            rep = event_reports[beta]
            params = make_block_params("lower", n_max, config.theta, beta)
            p_b = rep["p_B"]["p"]
            p_eta = rep["p_eta_given_BB"]["p"]
            cert = {
                "beta": beta, "m": params.m, "M": params.M,
                "p_B": p_b, "p_eta_given_BB": p_eta,
                "applicable": bool(p_eta > 0.75 and p_b > 0),
            }
            if cert["applicable"]:
                cert["log_certificate"] = params.M * (math.log(p_b) + math.log(0.25))
            (out / "certificate.json").write_text(json.dumps(cert, indent=1, sort_keys=True) + "\n")
            artifacts.append("certificate.json")
    return artifacts
