"""Command-line entry point: train, sweep, reference, report.

Exit codes: 0 success, 2 usage/config error, 3 divergence, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import problems as P
from . import reference
from .losses import VARIANTS, get_variant
from .trainer import SamplingPlan, TrainConfig, read_record, sweep, train, write_record, write_sweep

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
OUT_ENV = "SOBOLEV_PINN_OUT"

CATALOG_HELP = (
    f"problems: {', '.join(P.CATALOG_EXAMPLES)}; "
    f"losses: {', '.join(VARIANTS)}"
)


class UsageError(Exception):
    pass


def _add_train_flags(p: argparse.ArgumentParser, multi_loss: bool = False) -> None:
    p.add_argument("--config", help="JSON file with TrainConfig fields; flags override it")
    p.add_argument("--problem", help="catalog name, e.g. heat, burgers, fp-f2, poisson-d10-k1, toy-sin-k3")
    p.add_argument("--loss", help="loss variant" + (" (comma-separated list)" if multi_loss else "") +
                   f": {', '.join(VARIANTS)}")
    p.add_argument("--arch", help="layer widths, e.g. 2-64-64-1 (default d-64-64-1)")
    p.add_argument("--lr", type=float, help="learning rate (default 1e-3, Poisson 1e-4)")
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--threshold", type=float, help="test-error threshold for epochs-to-threshold")
    p.add_argument("--no-stop", action="store_true", help="keep training after the threshold is reached")
    p.add_argument("--metric", choices=["linf_l2", "relative_l2"])
    p.add_argument("--eval-every", type=int)
    p.add_argument("--test-resolution", type=int)
    p.add_argument("--reference", help="ReferenceGrid file for Fokker-Planck test errors")
    p.add_argument("--sampling", choices=["fixed", "iterative"])
    p.add_argument("--n-t", type=int)
    p.add_argument("--n-x", type=int)
    p.add_argument("--n-b", type=int)
    p.add_argument("--n-v", type=int)
    p.add_argument("--points", type=int, help="interior points per epoch (iterative sampling)")
    p.add_argument("--boundary-points", type=int, help="boundary points per epoch (iterative sampling)")
    p.add_argument("--sampling-seed", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")


_SCALAR_FLAGS = {
    "problem": "problem", "arch": "arch", "lr": "lr", "beta1": "beta1", "beta2": "beta2", "eps": "eps",
    "epochs": "epochs", "threshold": "threshold", "metric": "metric", "eval_every": "eval_every",
    "test_resolution": "test_resolution", "reference": "reference", "seed": "seed",
}
_SAMPLING_FLAGS = {
    "sampling": "mode", "n_t": "n_t", "n_x": "n_x", "n_b": "n_b", "n_v": "n_v",
    "points": "n_points", "boundary_points": "n_boundary", "sampling_seed": "seed",
}


def _build_config(args, loss: str | None) -> TrainConfig:
    doc: dict = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from exc
    for flag, key in _SCALAR_FLAGS.items():
        val = getattr(args, flag)
        if val is not None:
            doc[key] = val
    if loss is not None:
        doc["loss"] = loss
    if args.no_stop:
        doc["stop_at_threshold"] = False
    sampling = dict(doc.get("sampling") or {})
    for flag, key in _SAMPLING_FLAGS.items():
        val = getattr(args, flag)
        if val is not None:
            sampling[key] = val
    doc["sampling"] = sampling or None
    if "problem" not in doc or "loss" not in doc:
        raise UsageError(f"--problem and --loss are required ({CATALOG_HELP})")
    try:
        if doc["sampling"] is not None and "mode" not in doc["sampling"]:
            problem = P.get_problem(doc["problem"])
            doc["sampling"]["mode"] = "iterative" if problem.kind == "poisson" else "fixed"
        return TrainConfig.from_dict(doc).validate()
    except (KeyError, ValueError, TypeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        raise UsageError(f"{msg} ({CATALOG_HELP})") from exc


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "runs")


def cmd_train(args) -> int:
    config = _build_config(args, args.loss)
    record = train(config)
    stem = f"{config.seed:03d}"
    write_record(record, _out_dir(args), stem)
    status = "diverged" if record.diverged else "done"
    print(f"{config.problem} {config.loss} seed {config.seed}: {status}, "
          f"final error {record.final_error:.4e}, epochs to threshold {record.epochs_to_threshold}, "
          f"{record.seconds:.1f}s")
    return EXIT_DIVERGED if record.diverged else EXIT_OK


def cmd_sweep(args) -> int:
    if args.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    if not args.loss and not args.config:
        raise UsageError(f"--loss is required ({CATALOG_HELP})")
    losses = [s for s in (args.loss or "").split(",") if s] or [None]
    configs = [_build_config(args, loss) for loss in losses]
    out = _out_dir(args)
    any_diverged = False
    for config in configs:
        result = sweep(config, args.seeds, jobs=args.jobs)
        tag = get_variant(config.loss).tag.lower()
        prefix = f"{config.problem}_{tag}"
        for rec in result.records:
            write_record(rec, out / prefix, f"{rec.seed:03d}")
        write_sweep(result, out, prefix)
        s = result.summary
        any_diverged |= s["n_diverged"] > 0
        mean = "n/a" if s["epochs_mean"] is None else f"{s['epochs_mean']:.1f}+-{s['epochs_std']:.1f}"
        print(f"{prefix}: {s['n_reached']}/{s['n_runs']} reached threshold, epochs {mean}, "
              f"final error {s['final_error_mean']:.4e}, diverged {s['n_diverged']}")
    return EXIT_DIVERGED if any_diverged else EXIT_OK


def cmd_reference(args) -> int:
    try:
        problem = P.get_problem(args.problem)
    except KeyError as exc:
        raise UsageError(f"{exc.args[0]}") from exc
    if problem.kind != "fokker_planck":
        raise UsageError(f"{problem.name} has a closed-form solution; no reference grid needed")
    try:
        grid = reference.fp_solve(
            lambda x, v: P.initial_data(problem, np.stack(np.broadcast_arrays(x, v), axis=-1)),
            nx=args.nx, nv=args.nv, nt=args.nt, T=problem.T, vmax=problem.vmax,
            beta=problem.beta, q=problem.q_diff, snapshots=args.snapshots, name=problem.name,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    grid.save(out)
    m0, m1 = grid.metadata["mass_initial"], grid.metadata["mass_final"]
    print(f"wrote {out}: {grid.values.shape} values, nt={grid.metadata['nt']}; "
          f"mass {m0:.12f} -> {m1:.12f} (relative drift {abs(m1 - m0) / m0:.2e})")
    return EXIT_OK


REPORT_FIELDS = ["problem", "variant", "runs", "reached", "diverged", "epochs_mean", "epochs_std",
                 "final_error_mean", "final_error_std"]


def _fmt(x):
    return "" if x is None else f"{x:.6g}"


def cmd_report(args) -> int:
    root = Path(args.input)
    if not root.is_dir():
        raise OSError(f"{root} is not a directory")
    groups = defaultdict(list)
    for path in sorted(root.rglob("*.json")):
        if path.name.endswith(".params.json"):
            continue
        try:
            rec = read_record(path)
        except (KeyError, json.JSONDecodeError, TypeError):
            continue
        groups[(rec.config["problem"], get_variant(rec.config["loss"]).tag)].append(rec)
    rows = []
    for (problem, tag), recs in sorted(groups.items()):
        done = [r for r in recs if not r.diverged]
        reached = [r.epochs_to_threshold for r in done if r.epochs_to_threshold is not None]
        finals = [r.final_error for r in done]
        rows.append({
            "problem": problem, "variant": tag, "runs": len(recs), "reached": len(reached),
            "diverged": len(recs) - len(done),
            "epochs_mean": float(np.mean(reached)) if reached else None,
            "epochs_std": float(np.std(reached)) if reached else None,
            "final_error_mean": float(np.mean(finals)) if finals else None,
            "final_error_std": float(np.std(finals)) if finals else None,
        })
    buf = io.StringIO()
    if args.format == "csv":
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in rows:
            w.writerow([_fmt(r[k]) if isinstance(r[k], float) or r[k] is None else r[k] for k in REPORT_FIELDS])
    else:
        buf.write(f"{'problem':<18} {'variant':<8} {'runs':>4} {'reached':>7} {'epochs':>20} {'final error':>24}\n")
        for r in rows:
            ep = "-" if r["epochs_mean"] is None else f"{r['epochs_mean']:.1f} +- {r['epochs_std']:.1f}"
            fe = "-" if r["final_error_mean"] is None else f"{r['final_error_mean']:.3e} +- {r['final_error_std']:.1e}"
            buf.write(f"{r['problem']:<18} {r['variant']:<8} {r['runs']:>4} {r['reached']:>7} {ep:>20} {fe:>24}\n")
    text = buf.getvalue()
    if args.output:
        Path(args.output).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sobolev-pinn", description="Sobolev-loss PINN training toolkit.",
                                     epilog=CATALOG_HELP)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one network", epilog=CATALOG_HELP)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train over consecutive seeds", epilog=CATALOG_HELP)
    _add_train_flags(p, multi_loss=True)
    p.add_argument("--seeds", type=int, default=10, help="number of seeds (base from --seed)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("reference", help="solve Fokker-Planck on a grid and write it", epilog=CATALOG_HELP)
    p.add_argument("--problem", required=True, help="fp-f1 or fp-f2")
    p.add_argument("--nx", type=int, default=64)
    p.add_argument("--nv", type=int, default=128)
    p.add_argument("--nt", type=int, help="time steps (default: smallest stable count)")
    p.add_argument("--snapshots", type=int, default=31)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("report", help="summarize run records by (problem, variant)")
    p.add_argument("--in", dest="input", required=True, help="directory with run JSON files")
    p.add_argument("--format", choices=["text", "csv"], default="text")
    p.add_argument("--output", help="also write the table here")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
