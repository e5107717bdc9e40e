"""Command-line interface: corpus generation, training, sweeps, analysis."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__
from .acoustics import make_corpus
from .errors import ConfigError
from .model import DereverbModel, ModelConfig, count_parameters, receptive_field
from .sweep import (
    DESK_BASE,
    DESK_R_VALUES,
    DESK_X_VALUES,
    FULL_SCALE_R_VALUES,
    FULL_SCALE_X_VALUES,
    SweepConfig,
    best_cells,
    best_per_block_count,
    format_float,
    run_sweep,
    scatter_rows,
)
from .training import Corpus, TrainSchedule, evaluate, fit


def _parse_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(part) for part in text.split(":"))
    except ValueError:
        raise ConfigError(f"expected LO:HI, got {text!r}") from None
    return lo, hi


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _parse_named_path(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"expected NAME=PATH, got {text!r}")
    name, path = text.split("=", 1)
    return name, path


def _add_model_args(parser: argparse.ArgumentParser, require_grid_cell: bool) -> None:
    group = parser.add_argument_group("model")
    if require_grid_cell:
        group.add_argument("-X", type=int, required=True, help="blocks per dilation stack")
        group.add_argument("-R", type=int, required=True, help="repeats of the dilated stack")
    group.add_argument("--block-len", type=int, default=16, help="analysis block length, samples")
    group.add_argument("--enc-channels", type=int, default=512)
    group.add_argument("--bottleneck-channels", type=int, default=128)
    group.add_argument("--conv-channels", type=int, default=512)
    group.add_argument("--kernel-size", type=int, default=3)
    group.add_argument("--sample-rate", type=int, default=8000)
    group.add_argument("--block-norm", choices=["gln", "cln", "none"], default="gln")
    group.add_argument("--no-residual", action="store_true", help="disable block residual paths")


def _model_overrides(args) -> dict:
    return {
        "block_len": args.block_len,
        "enc_channels": args.enc_channels,
        "bottleneck_channels": args.bottleneck_channels,
        "conv_channels": args.conv_channels,
        "kernel_size": args.kernel_size,
        "sample_rate": args.sample_rate,
        "block_norm": args.block_norm,
        "residual": not args.no_residual,
    }


def _add_schedule_args(parser: argparse.ArgumentParser, epochs_default: int) -> None:
    group = parser.add_argument_group("training schedule")
    group.add_argument("--epochs", type=int, default=epochs_default)
    group.add_argument("--lr", type=float, default=1e-3)
    group.add_argument("--patience", type=int, default=3)
    group.add_argument("--batch-size", type=int, default=2)
    group.add_argument("--clip-seconds", type=float, default=4.0)


def _schedule(args, seed: int) -> TrainSchedule:
    return TrainSchedule(
        epochs=args.epochs,
        lr=args.lr,
        patience=args.patience,
        batch_size=args.batch_size,
        clip_seconds=args.clip_seconds,
        seed=seed,
    )


def cmd_make_corpus(args) -> int:
    counts = {"train": args.train, "val": args.val, "test": args.test}
    out = make_corpus(
        args.out,
        counts,
        _parse_range(args.rt60),
        duration=args.duration,
        seed=args.seed,
        sources=args.source_wav or None,
        workers=args.workers,
    )
    print(f"corpus written to {out}")
    return 0


def cmd_rf(args) -> int:
    cfg = ModelConfig(blocks_per_stack=args.X, repeats=args.R, **_model_overrides(args))
    rf = receptive_field(cfg)
    counts = count_parameters(cfg)
    if args.json:
        print(
            json.dumps(
                {
                    "x": args.X,
                    "r": args.R,
                    "rf_seconds": rf,
                    "param_count": counts.to_dict(),
                },
                sort_keys=True,
            )
        )
        return 0
    print(f"receptive field: {format_float(rf)} s")
    print(f"parameters total: {counts.total}")
    print(f"parameters per block (core identity): {counts.per_block_core}")
    for name, value in counts.to_dict().items():
        if name not in ("total", "per_block_core"):
            print(f"  {name}: {value}")
    return 0


def cmd_train(args) -> int:
    cfg = ModelConfig(blocks_per_stack=args.X, repeats=args.R, **_model_overrides(args))
    corpus = Corpus.load(args.corpus)
    model = DereverbModel(cfg, seed=args.seed)
    result = fit(model, corpus, _schedule(args, args.seed), args.out)
    print(f"best validation SI-SDR: {format_float(result.best_val_sisdr)} dB")
    print(f"checkpoint: {result.best_checkpoint}")
    return 0


def cmd_eval(args) -> int:
    model = DereverbModel.load(args.checkpoint)
    corpus = Corpus.load(args.corpus)
    records, aggregates = evaluate(model, corpus.split(args.split))
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as fh:
            for record in records:
                fh.write(json.dumps(record.to_dict()) + "\n")
    if args.json:
        print(json.dumps(aggregates, sort_keys=True))
    else:
        print(f"mean SI-SDR: {format_float(aggregates['mean_sisdr'])} dB")
        print(f"mean delta SI-SDR: {format_float(aggregates['mean_delta_sisdr'])} dB")
    return 0


def cmd_sweep(args) -> int:
    if args.config:
        cfg = SweepConfig.from_dict(json.loads(Path(args.config).read_text()))
    else:
        if not args.train_corpus or not args.eval_corpus:
            raise ConfigError("sweep needs --train-corpus and --eval-corpus (or --config)")
        base = _model_overrides(args)
        if args.full_scale:
            print(
                "warning: full-scale grid (X 1..10, R 1..8, 512-channel blocks); "
                "expect a very long run",
                file=sys.stderr,
            )
            x_values = tuple(FULL_SCALE_X_VALUES)
            r_values = tuple(FULL_SCALE_R_VALUES)
        else:
            x_values = args.x_values or tuple(DESK_X_VALUES)
            r_values = args.r_values or tuple(DESK_R_VALUES)
            if not args.full_channels:
                base.update(DESK_BASE)
        cfg = SweepConfig(
            x_values=x_values,
            r_values=r_values,
            train_corpora=dict(args.train_corpus),
            eval_corpora=dict(args.eval_corpus),
            base=base,
            schedule=_schedule(args, args.seed),
            out_dir=args.out,
            seed=args.seed,
            workers=args.workers,
        )
    rows = run_sweep(cfg)
    failures = [row for row in rows if "error" in row]
    print(f"sweep complete: {len(rows)} result rows in {cfg.out_dir}")
    if failures:
        print(f"warning: {len(failures)} cell(s) failed; see results.jsonl", file=sys.stderr)
    return 0


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(
                [
                    format_float(row[c]) if isinstance(row[c], float) else row[c]
                    for c in columns
                ]
            )


def cmd_analyze(args) -> int:
    results_path = Path(args.results) / "results.jsonl"
    if not results_path.is_file():
        raise ConfigError(f"no results.jsonl under {args.results}")
    rows = [json.loads(line) for line in results_path.read_text().splitlines()]
    rows = [row for row in rows if row.get("eval_corpus") is not None]
    if not rows:
        raise ConfigError("results contain no completed cells")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    scatter = scatter_rows(rows)
    _write_csv(
        out / "scatter.csv",
        scatter,
        ["train_corpus", "eval_corpus", "x", "r", "rf_seconds", "param_count", "sisdr", "delta_sisdr"],
    )
    by_blocks = best_per_block_count(rows, metric=args.metric)
    _write_csv(
        out / "best_by_blocks.csv",
        by_blocks,
        ["train_corpus", "eval_corpus", "block_count", "x", "r", "rf_seconds", args.metric],
    )
    best = best_cells(rows, metric="sisdr")
    _write_csv(
        out / "best_cells.csv",
        best,
        ["train_corpus", "eval_corpus", "x", "r", "param_count", "rf_seconds", "sisdr", "delta_sisdr"],
    )
    print(f"analysis written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dereverbtcn",
        description="Dilated-TCN speech dereverberation: data, training, sweeps",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus", help="generate a synthetic reverberant corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--rt60", default="0.1:1.0", help="RT60 range LO:HI in seconds")
    p.add_argument("--train", type=int, default=4)
    p.add_argument("--val", type=int, default=2)
    p.add_argument("--test", type=int, default=2)
    p.add_argument("--duration", type=float, default=4.0, help="clip length in seconds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument(
        "--source-wav",
        action="append",
        help="dry source WAV (repeatable); defaults to the synthetic generator",
    )
    p.set_defaults(func=cmd_make_corpus)

    p = sub.add_parser("rf", help="receptive field and parameter count for a configuration")
    _add_model_args(p, require_grid_cell=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_rf)

    p = sub.add_parser("train", help="train a single configuration")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_model_args(p, require_grid_cell=True)
    _add_schedule_args(p, epochs_default=100)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="optional JSONL path for per-example records")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train and evaluate an (X, R) grid")
    p.add_argument("--config", help="sweep config JSON (overrides the flags below)")
    p.add_argument("--train-corpus", action="append", type=_parse_named_path, metavar="NAME=PATH")
    p.add_argument("--eval-corpus", action="append", type=_parse_named_path, metavar="NAME=PATH")
    p.add_argument("--x-values", type=_parse_int_list, help="comma-separated stack depths")
    p.add_argument("--r-values", type=_parse_int_list, help="comma-separated repeat counts")
    p.add_argument("--out", default="sweep")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument(
        "--full-scale",
        action="store_true",
        help="full grid X in 1..10, R in 1..8 at full channel sizes (very slow)",
    )
    p.add_argument(
        "--full-channels",
        action="store_true",
        help="keep the model-flag channel sizes instead of the micro defaults",
    )
    _add_model_args(p, require_grid_cell=False)
    _add_schedule_args(p, epochs_default=2)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="emit figure/table data from sweep results")
    p.add_argument("--results", required=True, help="sweep output directory")
    p.add_argument("--out", required=True)
    p.add_argument("--metric", choices=["delta_sisdr", "sisdr"], default="delta_sisdr")
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
