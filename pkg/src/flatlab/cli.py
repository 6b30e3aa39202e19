"""Command-line entry points: train, sweep, interpolate, surface, report.

Exit codes: 0 on success, 2 for configuration errors, 3 when every run of
a training command diverged.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness, models
from .errors import ConfigError
from .optimizers import run_training
from .params import save_checkpoint
from .rng import RngStream

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _add_common(parser: argparse.ArgumentParser, *, config_required: bool = True) -> None:
    parser.add_argument("--config", required=config_required, help="JSON config file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the run seed(s)")
    parser.add_argument("--workers", type=int, default=1, help="parallel runs for sweeps")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a scalar config key, e.g. optimizer.lr=0.05 (repeatable)",
    )


def _cmd_train(args) -> int:
    raw = harness.load_config(args.config, args.overrides)
    run = harness.RunConfig.from_dict(raw)
    if args.seed is not None:
        run.seed = args.seed
    dataset = harness.build_dataset(run.data)
    model, params0 = harness.build_model_for(run.model, run.metric, dataset, run.seed)
    result = run_training(
        model,
        params0,
        dataset,
        run.optimizer,
        mode=run.mode,
        rho=run.rho,
        swa_start_frac=run.swa_start_frac,
        swa_freq=run.swa_freq,
        rng=RngStream(run.seed).split("train"),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.final, out / "final.fltl")
    if result.averaged is not None:
        save_checkpoint(result.averaged, out / "averaged.fltl")
    with open(out / "history.csv", "w", newline="") as fh:
        fh.write("epoch,train_loss,train_metric,val_loss,val_metric\n")
        for s in result.history:
            fh.write(
                f"{s.epoch},{harness._fmt(s.train_loss)},{harness._fmt(s.train_metric)},"
                f"{harness._fmt(s.val_loss)},{harness._fmt(s.val_metric)}\n"
            )
    if result.diverged:
        print("run diverged; last finite checkpoint written", file=sys.stderr)
        return EXIT_DIVERGED
    solution = result.averaged if run.mode in ("swa", "wasam") else result.final
    for split in ("val", "test"):
        if split in dataset.splits and dataset.split_indices(split).size:
            loss, metric = harness.evaluate_solution(model, solution, dataset, split)
            print(f"{split}: loss={loss:.6f} metric={metric:.4f}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    raw = harness.load_config(args.config, args.overrides)
    if args.seed is not None:
        raw["seeds"] = [args.seed]
    config = harness.ExperimentConfig.from_dict(raw)
    result = harness.run_experiment(config, args.out, workers=args.workers)
    print((result.out_dir / "summary.txt").read_text(), end="")
    if result.all_diverged:
        print("every run diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_interpolate(args) -> int:
    raw = harness.load_config(args.config, args.overrides)
    grid_path, barrier_path = harness.interpolate_checkpoints(
        raw,
        args.ckpt_a,
        args.ckpt_b,
        args.out,
        steps=args.steps,
        alpha_min=args.alpha_min,
        alpha_max=args.alpha_max,
        splits=tuple(args.splits.split(",")),
        recompute_bn=not args.no_bn_recompute,
    )
    print(grid_path)
    print(barrier_path)
    return EXIT_OK


def _cmd_surface(args) -> int:
    raw = harness.load_config(args.config, args.overrides)
    path = harness.surface_checkpoint(
        raw,
        args.ckpt,
        args.out,
        steps=args.steps,
        value_range=(args.range[0], args.range[1]),
        normalization=args.normalization,
        direction_seed=args.seed if args.seed is not None else 0,
        splits=tuple(args.splits.split(",")),
        recompute_bn=not args.no_bn_recompute,
        crop_alpha=tuple(args.crop_alpha) if args.crop_alpha else None,
        crop_beta=tuple(args.crop_beta) if args.crop_beta else None,
    )
    print(path)
    return EXIT_OK


def _cmd_report(args) -> int:
    table = harness.report(args.results)
    print((Path(args.results) / "summary.txt").read_text(), end="")
    return EXIT_OK if table.rows else EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flatlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training configuration")
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sweep", help="run a full multi-seed hyperparameter sweep")
    _add_common(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("interpolate", help="loss/metric profile on the line between two checkpoints")
    _add_common(p)
    p.add_argument("--ckpt-a", required=True)
    p.add_argument("--ckpt-b", required=True)
    p.add_argument("--steps", type=int, default=26)
    p.add_argument("--alpha-min", type=float, default=-1.0)
    p.add_argument("--alpha-max", type=float, default=1.5)
    p.add_argument("--splits", default="train,test")
    p.add_argument("--no-bn-recompute", action="store_true")
    p.set_defaults(func=_cmd_interpolate)

    p = sub.add_parser("surface", help="2-d loss/metric surface around a checkpoint")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--range", type=float, nargs=2, default=(-1.0, 1.0))
    p.add_argument("--normalization", choices=("filter", "global", "none"), default="filter")
    p.add_argument("--splits", default="train,test")
    p.add_argument("--no-bn-recompute", action="store_true")
    p.add_argument("--crop-alpha", type=float, nargs=2, default=None)
    p.add_argument("--crop-beta", type=float, nargs=2, default=None)
    p.set_defaults(func=_cmd_surface)

    p = sub.add_parser("report", help="regenerate summary tables from results.csv")
    p.add_argument("--results", required=True, help="experiment output directory")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
