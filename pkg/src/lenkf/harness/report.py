"""Result persistence: CSV series, structured-text summaries and the
matching matplotlib figures rendered next to the delimited output."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .runner import RunResult

_FMT = "%.12g"


def _fmt(value: float) -> str:
    return _FMT % value


def emit_series(result: RunResult, path) -> None:
    """Repetition-mean RMSE series, one row per cycle."""
    series = result.mean_series()
    n = series["state_rmse"].size
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cycle", "state_rmse", "global_param_rmse", "local_param_rmse"])
        for c in range(n):
            writer.writerow([c + 1,
                             _fmt(series["state_rmse"][c]),
                             _fmt(series["global_param_rmse"][c]),
                             _fmt(series["local_param_rmse"][c])])


def emit_summary(result: RunResult, path) -> None:
    """Config echo, per-repetition scores and aggregate statistics."""
    cfg = result.config
    lines = ["# configuration"]
    lines += cfg.to_lines()
    lines.append("")
    lines.append("# repetitions")
    lines.append("rep  state_rmse  global_param_rmse  local_param_rmse  diverged  "
                 "diverged_cycle  wall_time_s")
    state_avgs = []
    for i, rep in enumerate(result.repetitions):
        avg_s = rep.time_averaged(cfg.spinup, "state_rmse")
        avg_p = rep.time_averaged(cfg.spinup, "global_param_rmse")
        avg_q = rep.time_averaged(cfg.spinup, "local_param_rmse")
        state_avgs.append(avg_s)
        lines.append(f"{i}  {_fmt(avg_s)}  {_fmt(avg_p)}  {_fmt(avg_q)}  "
                     f"{rep.diverged}  {rep.diverged_cycle}  {rep.wall_time:.2f}")
    lines.append("")
    lines.append("# aggregate (time-averaged state RMSE over post-spinup cycles)")
    arr = np.array(state_avgs)
    finite = arr[np.isfinite(arr)]
    lines.append(f"mean = {_fmt(arr.mean()) if arr.size else 'nan'}")
    lines.append(f"mean_completed = {_fmt(finite.mean()) if finite.size else 'nan'}")
    lines.append(f"std_completed = {_fmt(finite.std()) if finite.size else 'nan'}")
    lines.append(f"diverged = {result.diverged_count}/{len(result.repetitions)}")
    Path(path).write_text("\n".join(lines) + "\n")


def render_series_figure(result: RunResult, path) -> None:
    series = result.mean_series()
    fig, ax = plt.subplots(figsize=(7, 4))
    n = series["state_rmse"].size
    if n:
        cycles = np.arange(1, n + 1)
        ax.plot(cycles, series["state_rmse"], label="state", lw=1.2)
        if np.any(series["global_param_rmse"] > 0):
            ax.plot(cycles, series["global_param_rmse"], label="global params", lw=1.2)
        if np.any(series["local_param_rmse"] > 0):
            ax.plot(cycles, series["local_param_rmse"], label="local params", lw=1.2)
        ax.set_yscale("log")
        ax.axvline(result.config.spinup, color="grey", ls=":", lw=0.8)
    ax.set_xlabel("cycle")
    ax.set_ylabel("analysis RMSE")
    ax.set_title(f"{result.config.filter} on {result.config.model}, "
                 f"$N_e$={result.config.n_e}")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def emit_skill(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["block", "sigma", "lead_time", "nrmse", "diverged_trials",
                         "trials"])
        for row in rows:
            writer.writerow([row["block"], _fmt(row["sigma"]), _fmt(row["lead_time"]),
                             _fmt(row["nrmse"]), row["diverged_trials"], row["trials"]])


def render_skill_figure(rows: list, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for block in ("coeffs", "forcing"):
        pts = [(r["sigma"], r["nrmse"], r["diverged_trials"]) for r in rows
               if r["block"] == block]
        if not pts:
            continue
        pts.sort()
        sig = [p[0] for p in pts]
        val = [p[1] for p in pts]
        label = "monomial coefficients" if block == "coeffs" else "forcing coefficients"
        line, = ax.plot(sig, val, marker="o", ms=3, label=label)
        stopped = [(s, v) for s, v, d in pts if d]
        if stopped:
            ax.plot(*zip(*stopped), ls="none", marker="o", ms=7,
                    color=line.get_color())
    ax.set_xlabel(r"perturbation std $\sigma$")
    ax.set_ylabel("normalized RMSE")
    ax.set_yscale("log")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def emit_lyapunov(exponents: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "exponent"])
        for i, lam in enumerate(exponents):
            writer.writerow([i + 1, _fmt(lam)])


def render_lyapunov_figure(exponents: np.ndarray, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.arange(1, exponents.size + 1), exponents, marker="o", ms=3)
    ax.axhline(0.0, color="grey", lw=0.8)
    ax.set_xlabel("exponent index")
    ax.set_ylabel("Lyapunov exponent")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def emit_tune(entries: list, path) -> None:
    keys = sorted({k for e in entries for k in e.values})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys + ["state_rmse", "diverged_repetitions"])
        for e in entries:
            writer.writerow([e.values.get(k, "") for k in keys]
                            + [_fmt(e.score), e.diverged_repetitions])


def render_tune_figure(entries: list, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    scores = [e.score if np.isfinite(e.score) else np.nan for e in entries]
    labels = [",".join(f"{k}={v}" for k, v in e.values.items()) for e in entries]
    ax.plot(range(len(scores)), scores, marker="o", ms=4, lw=0.8)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=90, fontsize=6)
    ax.set_ylabel("time-averaged state RMSE")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def emit_equiv(gaps: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair", "max_relative_gap"])
        for key in sorted(gaps):
            writer.writerow([key, _fmt(gaps[key])])
