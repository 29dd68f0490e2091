"""Command-line interface: twin experiments, parameter tuning, forecast
skill curves, Lyapunov spectra and the filter-equivalence suite.

Exit codes: 0 on success, 2 when every repetition of a run diverged,
1 on any error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from ..dynamics import (L96iModel, ML96Model, climatological_std, forecast_skill,
                        identifying_params_1d, identifying_params_2d,
                        lyapunov_spectrum)
from ..obs import build_averaging_kernels, calibrate_kernels, export_kernels_csv
from . import report
from .config import ExperimentConfig, load_config
from .equiv import equivalence_gaps, matrix_shift_max_gap
from .runner import run_twin
from .tuning import grid_tune

_OVERRIDE_FLAGS = {
    "--model": "model",
    "--filter": "filter",
    "--obs": "obs",
    "--ne": "n_e",
    "--cycles": "cycles",
    "--spinup": "spinup",
    "--reps": "repetitions",
    "--seed": "seed",
    "--radius": "radius",
    "--radius-h": "radius_h",
    "--radius-v": "radius_v",
    "--inflation": "inflation",
    "--zeta-p": "zeta_p",
    "--zeta-q": "zeta_q",
    "--global-params": "global_params",
    "--local-params": "local_params",
}


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    for flag, key in _OVERRIDE_FLAGS.items():
        parser.add_argument(flag, dest=f"ov_{key}", metavar="V", default=None)
    parser.add_argument("--set", dest="ov_extra", action="append", default=[],
                        metavar="KEY=VALUE", help="override any config key")


def _collect_overrides(args: argparse.Namespace) -> dict:
    overrides = {}
    for key in _OVERRIDE_FLAGS.values():
        val = getattr(args, f"ov_{key}", None)
        if val is not None:
            overrides[key] = val
    for item in getattr(args, "ov_extra", []):
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, val = item.partition("=")
        overrides[key.strip()] = val.strip()
    return overrides


def _load(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(_collect_overrides(args))


def _outdir(args: argparse.Namespace) -> Path:
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _load(args)
    result = run_twin(cfg)
    out = _outdir(args)
    report.emit_series(result, out / "series.csv")
    report.emit_summary(result, out / "summary.txt")
    report.render_series_figure(result, out / "series.png")
    print((out / "summary.txt").read_text(), end="")
    if result.all_diverged:
        return 2
    return 0


def _parse_grid(text: str) -> dict:
    grid = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        key, _, values = part.partition("=")
        grid[key.strip()] = [None if v.strip().lower() == "none" else float(v)
                             for v in values.split(",")]
    return grid


def _cmd_tune(args: argparse.Namespace) -> int:
    cfg = _load(args)
    grid = _parse_grid(args.grid)
    result = grid_tune(cfg, grid)
    out = _outdir(args)
    report.emit_tune(result.entries, out / "tune.csv")
    report.render_tune_figure(result.entries, out / "tune.png")
    best_lines = ["# best configuration", f"state_rmse = {result.best_score:.6g}"]
    best_lines += result.best.to_lines()
    (out / "best.txt").write_text("\n".join(best_lines) + "\n")
    print("\n".join(best_lines))
    return 0


def _cmd_skill(args: argparse.Namespace) -> int:
    model = L96iModel()
    params = identifying_params_1d(model)
    clim = climatological_std(model, args.dt)[1]
    sigmas = [float(s) for s in args.sigmas.split(",")]
    rows = []
    for block in ("coeffs", "forcing"):
        for sigma in sigmas:
            rng = np.random.default_rng(args.seed)
            res = forecast_skill(params, model, args.lead, args.trials, block,
                                 sigma, rng, dt=args.dt, clim=clim)
            rows.append({"block": block, "sigma": sigma, "lead_time": args.lead,
                         "nrmse": res.nrmse, "diverged_trials": res.diverged_trials,
                         "trials": res.trials})
            print(f"{block:8s} sigma={sigma:<8g} nrmse={res.nrmse:.4f} "
                  f"diverged={res.diverged_trials}/{res.trials}")
    out = _outdir(args)
    report.emit_skill(rows, out / "skill.csv")
    report.render_skill_figure(rows, out / "skill.png")
    return 0


def _cmd_lyapunov(args: argparse.Namespace) -> int:
    if args.model == "l96i":
        model = L96iModel()
        n_exp = args.exponents or 18
    else:
        model = ML96Model()
        n_exp = args.exponents or 60
    exps = lyapunov_spectrum(model, n_exp, args.steps, dt=args.dt,
                             rng=np.random.default_rng(args.seed))
    positive = int(np.sum(exps > 0.01))
    near_zero = int(np.sum(np.abs(exps) <= 0.01))
    non_negative = int(np.sum(exps >= -0.01))
    print(f"model={args.model} exponents={n_exp} steps={args.steps}")
    print(f"positive (> 0.01): {positive}")
    print(f"near zero (|.| <= 0.01): {near_zero}")
    print(f"unstable-neutral (>= -0.01): {non_negative}")
    print("leading exponents:", np.array2string(exps[:16], precision=4))
    out = _outdir(args)
    report.emit_lyapunov(exps, out / "lyapunov.csv")
    report.render_lyapunov_figure(exps, out / "lyapunov.png", title=args.model)
    return 0


def _cmd_equiv(args: argparse.Namespace) -> int:
    gaps = equivalence_gaps(n_systems=args.systems, seed=args.seed)
    shift = matrix_shift_max_gap(n_systems=args.systems, seed=args.seed)
    gaps["matrix_shift"] = shift
    out = _outdir(args)
    report.emit_equiv(gaps, out / "equiv.csv")
    failed = [k for k, v in gaps.items() if v > args.tol]
    for key in sorted(gaps):
        status = "ok" if gaps[key] <= args.tol else "FAIL"
        print(f"{key:32s} {gaps[key]:.3e}  {status}")
    if failed:
        print(f"{len(failed)} pair(s) above tolerance {args.tol:g}")
        return 1
    return 0


def _cmd_kernels(args: argparse.Namespace) -> int:
    model = ML96Model()
    op = build_averaging_kernels()
    op = calibrate_kernels(op, model, run_length=args.steps, dt=args.dt)
    out = _outdir(args)
    export_kernels_csv(op, out / "kernels.csv")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(9, 4), sharey=True)
    levels = np.arange(1, op.n_v + 1)
    for k in range(op.n_channels):
        axes[0].plot(op.weights[k], levels, lw=1.0)
        axes[1].plot(op.norm[k] * op.weights[k], levels, lw=1.0)
    axes[0].set_title("raw kernels")
    axes[1].set_title("normalised kernels")
    axes[0].set_ylabel("vertical level")
    for ax in axes:
        ax.set_xlabel("weight")
    fig.tight_layout()
    fig.savefig(out / "kernels.png", dpi=150)
    plt.close(fig)
    print(f"wrote {out / 'kernels.csv'} and {out / 'kernels.png'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lenkf",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a twin experiment")
    p_run.add_argument("config", nargs="?", default=None)
    p_run.add_argument("--outdir", default="out")
    _add_override_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_tune = sub.add_parser("tune", help="grid-tune algorithmic parameters")
    p_tune.add_argument("config", nargs="?", default=None)
    p_tune.add_argument("--grid", required=True,
                        help="e.g. 'radius=4,6,8;inflation=1.02,1.05'")
    p_tune.add_argument("--outdir", default="out")
    _add_override_flags(p_tune)
    p_tune.set_defaults(func=_cmd_tune)

    p_skill = sub.add_parser("skill", help="surrogate forecast-skill curves")
    p_skill.add_argument("--sigmas", default="0.05,0.1,0.2,0.3")
    p_skill.add_argument("--lead", type=float, default=0.5)
    p_skill.add_argument("--trials", type=int, default=500)
    p_skill.add_argument("--seed", type=int, default=0)
    p_skill.add_argument("--dt", type=float, default=0.05)
    p_skill.add_argument("--outdir", default="out")
    p_skill.set_defaults(func=_cmd_skill)

    p_lyap = sub.add_parser("lyapunov", help="Lyapunov spectrum of a truth model")
    p_lyap.add_argument("model", choices=("l96i", "ml96"))
    p_lyap.add_argument("--exponents", type=int, default=None)
    p_lyap.add_argument("--steps", type=int, default=6000)
    p_lyap.add_argument("--seed", type=int, default=0)
    p_lyap.add_argument("--dt", type=float, default=0.05)
    p_lyap.add_argument("--outdir", default="out")
    p_lyap.set_defaults(func=_cmd_lyapunov)

    p_equiv = sub.add_parser("equiv", help="filter-equivalence suite")
    p_equiv.add_argument("--systems", type=int, default=50)
    p_equiv.add_argument("--seed", type=int, default=0)
    p_equiv.add_argument("--tol", type=float, default=1e-9)
    p_equiv.add_argument("--outdir", default="out")
    p_equiv.set_defaults(func=_cmd_equiv)

    p_ker = sub.add_parser("kernels", help="export calibrated averaging kernels")
    p_ker.add_argument("--steps", type=int, default=10_000)
    p_ker.add_argument("--dt", type=float, default=0.05)
    p_ker.add_argument("--outdir", default="out")
    p_ker.set_defaults(func=_cmd_kernels)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
