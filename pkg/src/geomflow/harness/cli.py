"""Command-line interface.

Subcommands: gen-data, train, eval, project, verify, sweep.
Exit codes: 0 success, 2 configuration/usage error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from ..dynamics import GENERATOR_DEFAULTS, load_dataset, make_pairs, save_dataset
from ..flowmatch import FlowTrainConfig, LearnedProjector, train_velocity
from ..geometry import make_kernel
from ..neuralnet import VARIANTS
from .config import OUTPUT_ROOT_ENV, RunConfig, SWEEP_DEPTHS, SWEEP_WEIGHT_DECAYS
from .metrics import (
    MetricsReport,
    SweepEntry,
    evaluate_model,
    model_select,
    noise_robustness_curve,
    write_curve_csv,
)
from .training import load_model_from_checkpoint, train_loop


class ConfigError(Exception):
    pass


def _resolve(path):
    root = os.environ.get(OUTPUT_ROOT_ENV, "")
    p = Path(path)
    return Path(root) / p if root and not p.is_absolute() else p


def _require_dataset(path, flag):
    if not path:
        raise ConfigError(f"{flag} is required")
    base = Path(path)
    if not base.with_suffix(".csv").exists() or not base.with_suffix(".json").exists():
        raise ConfigError(f"{flag}: no dataset found at '{path}' (.csv/.json pair)")
    return base


def cmd_gen_data(args):
    out = _resolve(args.out)
    extra = {}
    if args.alpha is not None:
        extra["alpha"] = args.alpha
    if args.kappa is not None:
        extra["kappa"] = args.kappa
    ds = make_pairs(args.dataset, args.n, T=args.T, dt=args.dt, seed=args.seed, **extra)
    save_dataset(ds, out)
    print(f"wrote {out}.csv ({ds.x0.shape[0]} pairs) and {out}.json")
    return 0


def cmd_train(args):
    base = _require_dataset(args.data, "--data")
    dataset = load_dataset(base)
    out = _resolve(args.out)
    if args.variant == "velocity":
        _, targets = dataset.subset("train")
        _, val_targets = dataset.subset("val")
        cfg = FlowTrainConfig(
            alpha=args.alpha, lr=args.lr, weight_decay=args.wd,
            batch_size=args.batch_size if args.batch_size else 256,
            epochs=args.epochs, seed=args.seed,
            early_stop_patience=args.early_stop_patience or 250,
            plateau_patience=args.plateau_patience or 100,
        )
        result = train_velocity(targets, val_targets, cfg)
        out.mkdir(parents=True, exist_ok=True)
        proj = LearnedProjector(spec=result.spec, params=result.params, T=result.T)
        proj.save(out / "projector")
        with open(out / "history.csv", "w") as fh:
            fh.write("epoch,train_loss,val_loss,lr\n")
            for row in result.history:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        print(f"projector saved to {out / 'projector'} "
              f"(best val {result.best_val:.6g} at epoch {result.best_epoch})")
        return 0

    if args.variant not in VARIANTS:
        raise ConfigError(f"--variant must be one of {VARIANTS} or 'velocity'")
    cfg = RunConfig(
        data=str(base), variant=args.variant, depth=args.depth,
        weight_decay=args.wd, lr=args.lr, epochs=args.epochs,
        batch_size=args.batch_size or 500, seed=args.seed, out_dir=str(out),
        projector=args.projector, dropout=args.dropout,
        n_anchors=args.n_anchors, resume=args.resume,
        plateau_patience=args.plateau_patience or 100,
        early_stop_patience=args.early_stop_patience or 200,
        clip_norm=args.clip_norm,
    )
    result = train_loop(cfg, dataset)
    print(f"best val {result.best_val:.6g} at epoch {result.best_epoch}; "
          f"checkpoints in {out}")
    return 0


def cmd_eval(args):
    base = _require_dataset(args.data, "--data")
    dataset = load_dataset(base)
    model, anchors, extra = load_model_from_checkpoint(_resolve(args.checkpoint))
    kernel = dataset.kernel()
    x_test, y_test = dataset.subset(args.split)
    if x_test.shape[0] == 0:
        raise ConfigError(f"dataset has no '{args.split}' split")
    report = evaluate_model(
        model, kernel, x_test, y_test, anchors=anchors,
        dataset=dataset.generator, variant=model.spec.variant,
    )
    payload = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out:
        Path(_resolve(args.out)).write_text(payload + "\n")
    print(payload)
    if args.noise_sigma:
        sigmas = [float(s) for s in args.noise_sigma.split(",") if s]
        rows = noise_robustness_curve(
            model, kernel, x_test, y_test, sigmas, seed=args.seed, anchors=anchors
        )
        curve_path = _resolve(args.curve_out or (str(args.checkpoint) + "_noise.csv"))
        write_curve_csv(rows, curve_path)
        print(f"noise curve written to {curve_path}")
    return 0


def cmd_project(args):
    pts = _read_points(args.input)
    if bool(args.kernel) == bool(args.checkpoint):
        raise ConfigError("exactly one of --kernel or --checkpoint is required")
    if args.kernel:
        kernel = make_kernel(args.kernel, n_copies=args.n_copies)
        out = kernel.metric_project(pts)
    else:
        proj = LearnedProjector.load(_resolve(args.checkpoint))
        out = proj.project(pts, method=args.method)
        if args.method == "euler" and args.steps:
            out = proj.project_euler(pts, n_steps=args.steps)
    out_path = _resolve(args.output)
    with open(out_path, "w") as fh:
        for row in np.atleast_2d(out):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    print(f"projected {np.atleast_2d(out).shape[0]} points -> {out_path}")
    return 0


def cmd_verify(args):
    from .. import oracles

    checks = []

    def run_varadhan(manifold):
        x = np.array([1.3, 0.0]) if manifold == "circle" else np.array([0.0, 0.0, 1.4])
        grid = None if manifold == "circle" else np.logspace(-4, -2, 6)
        nodes = None if manifold == "circle" else 1024
        fit = oracles.verify_varadhan_rate(manifold, x, t_grid=grid, quad_nodes=nodes)
        return {
            "check": f"varadhan-rate-{manifold}",
            "constants": {"x": list(x), "t_grid": [s[0] for s in fit.samples]},
            "measured": fit.slope,
            "threshold": fit.threshold,
            "pass": bool(fit.passed),
        }

    def run_gronwall():
        out = []
        for delta in (0.0, 1e-4, 1e-3, 1e-2):
            chk = oracles.verify_gronwall_bound(delta, T=1.0, dt=1e-3)
            out.append({
                "check": f"flow-endpoint-bound-delta-{delta:g}",
                "constants": chk.constants,
                "measured": chk.measured,
                "bound": chk.bound if delta > 0 else 1e-12,
                "bound_proof_variant": chk.bound_proof_variant,
                "pass": bool(chk.measured <= 1e-12) if delta == 0 else bool(chk.passed),
            })
        return out

    def run_faa2eps():
        out = []
        for manifold in ("sphere", "disk"):
            for eps in (0.01, 0.1):
                chk = oracles.verify_faa_2eps(manifold, eps)
                out.append({
                    "check": f"final-projection-2eps-{manifold}-eps-{eps:g}",
                    "constants": {"eps": eps, "n_samples": chk.n_samples},
                    "measured": chk.max_error,
                    "bound": chk.bound,
                    "pass": bool(chk.passed),
                })
        return out

    def run_exprep():
        chk = oracles.verify_exp_representation(grid_n=50, seed=0)
        return {
            "check": "exponential-representation-sphere",
            "constants": {"grid": 50, "margin": chk.margin},
            "measured": chk.max_geodesic_error,
            "bound": 1e-10,
            "pass": bool(chk.passed),
        }

    which = args.check
    if which in ("varadhan", "all"):
        checks.append(run_varadhan(args.manifold if which == "varadhan" else "circle"))
    if which in ("gronwall", "all"):
        checks.extend(run_gronwall())
    if which in ("faa2eps", "all"):
        checks.extend(run_faa2eps())
    if which in ("exprep", "all"):
        checks.append(run_exprep())

    payload = json.dumps(checks if len(checks) > 1 else checks[0], indent=2)
    if args.out:
        Path(_resolve(args.out)).write_text(payload + "\n")
    print(payload)
    return 0 if all(c["pass"] for c in checks) else 3


def cmd_sweep(args):
    base = _require_dataset(args.data, "--data")
    dataset = load_dataset(base)
    out = _resolve(args.out)
    out.mkdir(parents=True, exist_ok=True)
    depths = [int(v) for v in args.depths.split(",")] if args.depths else list(SWEEP_DEPTHS)
    wds = [float(v) for v in args.wds.split(",")] if args.wds else list(SWEEP_WEIGHT_DECAYS)
    configs = [
        RunConfig(
            data=str(base), variant=args.variant, depth=depth, weight_decay=wd,
            lr=args.lr, epochs=args.epochs, batch_size=args.batch_size or 500,
            seed=args.seed, out_dir=str(out / f"depth{depth}_wd{wd:g}"),
            projector=args.projector,
        )
        for depth in depths
        for wd in wds
    ]
    entries = []
    if args.jobs > 1:
        # isolated per-job state: each worker reloads the dataset from disk
        from concurrent.futures import ProcessPoolExecutor

        from .training import run_config_job

        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for row in pool.map(run_config_job, [c.to_dict() for c in configs]):
                entries.append(SweepEntry(row["depth"], row["weight_decay"],
                                          row["best_val"], row["checkpoint"]))
    else:
        for cfg in configs:
            result = train_loop(cfg, dataset)
            entries.append(SweepEntry(cfg.depth, cfg.weight_decay, result.best_val,
                                      result.best_path))
    chosen = model_select(entries)
    model, anchors, _ = load_model_from_checkpoint(chosen.checkpoint)
    x_test, y_test = dataset.subset("test")
    report = evaluate_model(
        model, dataset.kernel(), x_test, y_test, anchors=anchors,
        dataset=dataset.generator, variant=args.variant,
    )
    summary = {
        "runs": [
            {"depth": e.depth, "weight_decay": e.weight_decay, "best_val": e.best_val,
             "checkpoint": e.checkpoint}
            for e in entries
        ],
        "selected": {"depth": chosen.depth, "weight_decay": chosen.weight_decay,
                     "checkpoint": chosen.checkpoint},
        "test_metrics": report.to_dict(),
    }
    with open(out / "sweep_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(summary["selected"], indent=2))
    return 0


def _read_points(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"--input: file '{path}' not found")
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            first = line.split(",")[0]
            try:
                float(first)
            except ValueError:
                continue  # header row
            rows.append([float(v) for v in line.split(",")])
    if not rows:
        raise ConfigError(f"--input: no numeric rows in '{path}'")
    return np.array(rows)


def build_parser():
    p = argparse.ArgumentParser(
        prog="geomflow",
        description="Geometry-preserving networks: data, training, projection, verification.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate an endpoint-pair dataset")
    g.add_argument("--dataset", required=True, choices=sorted(GENERATOR_DEFAULTS))
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output base path (writes .csv/.json)")
    g.add_argument("--T", type=float, default=None)
    g.add_argument("--dt", type=float, default=None)
    g.add_argument("--alpha", type=float, default=None, help="disk expansion rate")
    g.add_argument("--kappa", type=float, default=None, help="consensus coupling")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train an architecture or the flow projector")
    t.add_argument("--data", default="", help="dataset base path")
    t.add_argument("--variant", required=True)
    t.add_argument("--depth", type=int, default=4)
    t.add_argument("--epochs", type=int, default=2000)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--wd", type=float, default=0.0)
    t.add_argument("--batch-size", type=int, default=0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--projector", default="analytic",
                   help="learned-projector checkpoint base for flow variants")
    t.add_argument("--dropout", type=float, default=0.0)
    t.add_argument("--n-anchors", type=int, default=64)
    t.add_argument("--alpha", type=float, default=0.5, help="flow noising scale")
    t.add_argument("--resume", default="")
    t.add_argument("--plateau-patience", type=int, default=0)
    t.add_argument("--early-stop-patience", type=int, default=0)
    t.add_argument("--clip-norm", type=float, default=0.0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", default="")
    e.add_argument("--split", default="test")
    e.add_argument("--out", default="")
    e.add_argument("--noise-sigma", default="", help="comma-separated sigmas")
    e.add_argument("--curve-out", default="")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("project", help="map a CSV of points through a projector")
    pr.add_argument("--input", required=True)
    pr.add_argument("--output", required=True)
    pr.add_argument("--kernel", default="", help="analytic projection kernel name")
    pr.add_argument("--n-copies", type=int, default=1)
    pr.add_argument("--checkpoint", default="", help="learned projector base")
    pr.add_argument("--method", default="rk45", choices=["euler", "rk45"])
    pr.add_argument("--steps", type=int, default=0)
    pr.set_defaults(func=cmd_project)

    v = sub.add_parser("verify", help="run the numerical theorem checks")
    v.add_argument("--check", required=True,
                   choices=["varadhan", "gronwall", "faa2eps", "exprep", "all"])
    v.add_argument("--manifold", default="circle", choices=["circle", "sphere"])
    v.add_argument("--out", default="")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("sweep", help="grid over depth/weight-decay, select, evaluate")
    s.add_argument("--data", default="")
    s.add_argument("--variant", required=True)
    s.add_argument("--depths", default="")
    s.add_argument("--wds", default="")
    s.add_argument("--epochs", type=int, default=2000)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--batch-size", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--projector", default="analytic")
    s.add_argument("--jobs", type=int, default=1,
                   help="run sweep configurations in parallel processes")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
