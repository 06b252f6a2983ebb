"""Merged report table and figure rendering from persisted artifacts.

Reads whatever CSV/JSON artifacts a previous run left in the output
directory, writes one gnuplot-ready ``report.csv`` and renders PNG
figures next to it.  Missing inputs are skipped, not fatal.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _style() -> None:
    plt.rcParams.update({
        "figure.figsize": (6.0, 4.0),
        "figure.dpi": 110,
        "savefig.dpi": 170,
        "savefig.bbox": "tight",
        "axes.grid": True,
        "grid.alpha": 0.35,
        "grid.linewidth": 0.5,
        "legend.framealpha": 0.8,
        "font.size": 10,
    })


def _read_csv(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _read_json(path: Path):
    if not path.exists():
        return None
    return json.loads(path.read_text())


def render_report(out: Path | str) -> list[str]:
    out = Path(out)
    _style()
    artifacts: list[str] = []
    figdir = out / "figures"

    mean_rows = _read_csv(out / "mean_summary.csv")
    if not mean_rows:
        # fall back to the raw table when only prerequisites were computed
        mean_rows = [
            r | {"expansion": "nan", "one_term": "nan"}
            for r in _read_csv(out / "mean_table.csv")
        ]
    tail_rows = _read_csv(out / "tail_estimates.csv")
    fits = {}
    for method in ("splitting", "naive"):
        fit = _read_json(out / f"exponent_fit_{method}.json")
        if fit and "slope" in fit:
            fits[method] = fit

    merged = _merge_table(mean_rows, tail_rows, fits)
    if merged:
        header = list(merged[0].keys())
        with open(out / "report.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=header)
            writer.writeheader()
            writer.writerows(merged)
        artifacts.append("report.csv")

    figdir.mkdir(parents=True, exist_ok=True)
    if _fig_mean(mean_rows, figdir / "mean_range.png"):
        artifacts.append("figures/mean_range.png")
    if _fig_tail(tail_rows, fits, figdir / "tail_exponent.png"):
        artifacts.append("figures/tail_exponent.png")
    if _fig_mgf(out, figdir / "mgf_rate.png"):
        artifacts.append("figures/mgf_rate.png")
    if _fig_clt(out, figdir / "clt_samples.png"):
        artifacts.append("figures/clt_samples.png")
    return artifacts


def _merge_table(mean_rows, tail_rows, fits) -> list[dict]:
    by_n_tail = {}
    for r in tail_rows:
        by_n_tail.setdefault(int(r["n"]), {})[r["method"]] = r
    rows = []
    for r in sorted(mean_rows, key=lambda x: int(x["n"])):
        n = int(r["n"])
        row = {
            "n": n,
            "r_hat": r["r_hat"],
            "stderr": r["stderr"],
            "expansion": r.get("expansion", "nan"),
            "one_term": r.get("one_term", "nan"),
            "p_hat": "",
            "ci_low": "",
            "ci_high": "",
            "exponent_scale": "",
            "fit_neg_log_p": "",
        }
        tails = by_n_tail.get(n, {})
        est = tails.get("splitting") or tails.get("naive")
        if est:
            theta = float(est["theta"])
            row["p_hat"] = est["p_hat"]
            row["ci_low"] = est["ci_low"]
            row["ci_high"] = est["ci_high"]
            row["exponent_scale"] = f"{n ** (1 - 1 / theta):.17g}"
            fit = fits.get(est["method"])
            if fit:
                row["fit_neg_log_p"] = f"{math.exp(fit['intercept'] + fit['slope'] * math.log(n)):.17g}"
        rows.append(row)
    return rows


def _fig_mean(mean_rows, path: Path) -> bool:
    rows = [r for r in mean_rows if r.get("expansion") not in (None, "", "nan")]
    if len(rows) < 2:
        return False
    n = np.array([int(r["n"]) for r in rows], dtype=float)
    order = np.argsort(n)
    n = n[order]
    r_hat = np.array([float(r["r_hat"]) for r in rows])[order]
    two = np.array([float(r["expansion"]) for r in rows])[order]
    one = np.array([float(r["one_term"]) for r in rows])[order]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    axes[0].loglog(n, r_hat, "o-", label="Monte Carlo")
    axes[0].loglog(n, one, "s--", label="e1 n/log n")
    axes[0].loglog(n, two, "^--", label="two-term")
    axes[0].set_xlabel("n")
    axes[0].set_ylabel("mean range")
    axes[0].legend()
    axes[1].semilogx(n, r_hat / one - 1, "o-", label="MC / one-term - 1")
    axes[1].semilogx(n, two / one - 1, "^--", label="two-term / one-term - 1")
    axes[1].axhline(0, color="k", lw=0.8)
    axes[1].set_xlabel("n")
    axes[1].set_ylabel("relative correction")
    axes[1].legend()
    fig.savefig(path)
    plt.close(fig)
    return True


def _fig_tail(tail_rows, fits, path: Path) -> bool:
    usable = [r for r in tail_rows if float(r["p_hat"]) > 0 and float(r["p_hat"]) < 1]
    if len(usable) < 2:
        return False
    fig, ax = plt.subplots()
    for method in sorted({r["method"] for r in usable}):
        rows = sorted((r for r in usable if r["method"] == method), key=lambda r: int(r["n"]))
        n = np.array([int(r["n"]) for r in rows], dtype=float)
        y = np.log(-np.log(np.array([float(r["p_hat"]) for r in rows])))
        ax.plot(np.log(n), y, "o", label=f"{method}")
        fit = fits.get(method)
        if fit:
            xs = np.linspace(math.log(n.min()), math.log(n.max()), 50)
            ax.plot(xs, fit["intercept"] + fit["slope"] * xs, "-",
                    label=f"{method} fit: slope {fit['slope']:.3f}")
            ax.plot(xs, (fit["intercept"] + fit["slope"] * xs.mean()) - fit["predicted"] * xs.mean()
                    + fit["predicted"] * xs, ":",
                    label=f"predicted slope {fit['predicted']:.2f}")
    ax.set_xlabel("log n")
    ax.set_ylabel("log(-log p)")
    ax.legend()
    fig.savefig(path)
    plt.close(fig)
    return True


def _fig_mgf(out: Path, path: Path) -> bool:
    curve = _read_csv(out / "mgf_curve.csv")
    if not curve:
        return False
    lam = np.array([float(r["lambda"]) for r in curve])
    val = np.array([float(r["value"]) for r in curve])
    err = np.array([float(r["stderr"]) for r in curve])
    ess = np.array([float(r["ess"]) for r in curve])
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    ok = np.isfinite(err)
    axes[0].plot(lam, val, "-", lw=1.2)
    axes[0].fill_between(lam[ok], (val - err)[ok], (val + err)[ok], alpha=0.3)
    unreliable = ess < 100
    if unreliable.any():
        axes[0].plot(lam[unreliable], val[unreliable], "rx", ms=4, label="ESS < 100")
        axes[0].legend()
    axes[0].set_xlabel("lambda")
    axes[0].set_ylabel("log-MGF estimate")
    rate_rows = _read_csv(out / "rate_curve.csv")
    if rate_rows:
        beta = np.array([float(r["beta"]) for r in rate_rows])
        star = np.array([float(r["lambda_star"]) for r in rate_rows])
        axes[1].plot(beta, star, "-")
        sol = _read_json(out / "rate_solution.json")
        if sol:
            axes[1].axvline(sol["beta0_direct"], color="r", ls="--", lw=0.9,
                            label=f"beta0 = {sol['beta0_direct']:.2f}")
            axes[1].legend()
        axes[1].set_xlabel("beta")
        axes[1].set_ylabel("conjugate")
    fig.savefig(path)
    plt.close(fig)
    return True


def _fig_clt(out: Path, path: Path) -> bool:
    files = sorted(out.glob("scaled_samples_n*.csv"))
    if not files:
        return False
    fig, ax = plt.subplots()
    for f in files:
        n = int(f.stem.split("n")[-1])
        vals = np.array([float(r["value"]) for r in _read_csv(f)])
        ax.hist(vals, bins=80, density=True, histtype="step", label=f"n = {n}")
    ax.set_xlabel("(log^2 n / n) (R_n - r_hat)")
    ax.set_ylabel("density")
    ax.legend()
    fig.savefig(path)
    plt.close(fig)
    return True
