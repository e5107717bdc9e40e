"""Configuration-sweep harness: train/evaluate an (X, R) grid, emit table data.

Cells are independent: each gets its own output directory, RNG seed and
result file, which makes the sweep resumable (a finished cell is never
retrained) and safe to fan out over a process pool.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .model import DereverbModel, ModelConfig, count_parameters, receptive_field
from .training import Corpus, TrainSchedule, evaluate, fit

__all__ = [
    "SweepConfig",
    "run_sweep",
    "grid_csv_rows",
    "write_grid_csv",
    "scatter_rows",
    "best_per_block_count",
    "best_cells",
    "format_float",
]

SWEEP_SCHEMA_VERSION = 1

# Desk-scale defaults: a small grid over micro channel sizes. The full
# published grid (X up to 10, R up to 8, 512-channel blocks) is available
# behind an explicit flag in the CLI and is orders of magnitude slower.
DESK_X_VALUES = [1, 2, 3, 4]
DESK_R_VALUES = [1, 2]
DESK_BASE = {"enc_channels": 64, "bottleneck_channels": 16, "conv_channels": 32}
FULL_SCALE_X_VALUES = list(range(1, 11))
FULL_SCALE_R_VALUES = list(range(1, 9))


@dataclass(frozen=True)
class SweepConfig:
    x_values: tuple[int, ...]
    r_values: tuple[int, ...]
    train_corpora: dict[str, str]
    eval_corpora: dict[str, str]
    base: dict = field(default_factory=dict)  # ModelConfig overrides minus X/R
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    out_dir: str = "sweep"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not self.x_values or not self.r_values:
            raise ConfigError("sweep grid must be non-empty in both axes")
        if not self.train_corpora or not self.eval_corpora:
            raise ConfigError("sweep needs at least one train and one eval corpus")

    def model_config(self, x: int, r: int) -> ModelConfig:
        return ModelConfig(blocks_per_stack=x, repeats=r, **self.base)

    def to_dict(self) -> dict:
        return {
            "schema_version": SWEEP_SCHEMA_VERSION,
            "x_values": list(self.x_values),
            "r_values": list(self.r_values),
            "train_corpora": dict(self.train_corpora),
            "eval_corpora": dict(self.eval_corpora),
            "base": dict(self.base),
            "schedule": {
                "epochs": self.schedule.epochs,
                "lr": self.schedule.lr,
                "patience": self.schedule.patience,
                "clip_seconds": self.schedule.clip_seconds,
                "batch_size": self.schedule.batch_size,
                "seed": self.schedule.seed,
            },
            "out_dir": str(self.out_dir),
            "seed": self.seed,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        version = d.get("schema_version", SWEEP_SCHEMA_VERSION)
        if version != SWEEP_SCHEMA_VERSION:
            raise ConfigError(f"unsupported sweep config schema version {version}")
        schedule = TrainSchedule(**d.get("schedule", {}))
        return cls(
            x_values=tuple(d["x_values"]),
            r_values=tuple(d["r_values"]),
            train_corpora=dict(d["train_corpora"]),
            eval_corpora=dict(d["eval_corpora"]),
            base=dict(d.get("base", {})),
            schedule=schedule,
            out_dir=d.get("out_dir", "sweep"),
            seed=d.get("seed", 0),
            workers=d.get("workers", 1),
        )


def _cell_seed(seed: int, x: int, r: int, train_index: int) -> int:
    # Stable per-cell stream independent of execution order.
    return (seed * 1_000_003 + train_index * 10_007 + x * 101 + r) % (2**31 - 1)


def _run_cell(config_dict: dict, x: int, r: int, train_name: str, train_index: int) -> dict:
    """Train one grid cell and evaluate it on every eval corpus."""
    cfg = SweepConfig.from_dict(config_dict)
    cell_dir = Path(cfg.out_dir) / f"X{x}_R{r}" / train_name
    result_path = cell_dir / "result.json"
    if result_path.is_file():
        result = json.loads(result_path.read_text())
        result["resumed"] = True
        return result

    cell_dir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    seed = _cell_seed(cfg.seed, x, r, train_index)
    result = {
        "x": x,
        "r": r,
        "train_corpus": train_name,
        "seed": seed,
        "evals": {},
        "resumed": False,
    }
    try:
        model_cfg = cfg.model_config(x, r)
        result["rf_seconds"] = receptive_field(model_cfg)
        result["param_count"] = count_parameters(model_cfg).total
        result["block_norm"] = model_cfg.block_norm
        result["residual"] = model_cfg.residual
        corpus = Corpus.load(cfg.train_corpora[train_name])
        model = DereverbModel(model_cfg, seed=seed)
        schedule = replace(cfg.schedule, seed=seed)
        fit_result = fit(model, corpus, schedule, cell_dir)
        best = DereverbModel.load(fit_result.best_checkpoint)
        for eval_name, eval_path in cfg.eval_corpora.items():
            eval_corpus = Corpus.load(eval_path)
            records, aggregates = evaluate(best, eval_corpus.split("test"))
            with open(cell_dir / f"eval_{eval_name}.jsonl", "w") as fh:
                for record in records:
                    fh.write(json.dumps(record.to_dict()) + "\n")
            result["evals"][eval_name] = aggregates
    except Exception as exc:  # recorded, sweep continues with other cells
        result["error"] = f"{type(exc).__name__}: {exc}"
    result["wall_clock_s"] = time.monotonic() - started
    with open(result_path, "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
    return result


def run_sweep(cfg: SweepConfig) -> list[dict]:
    """Run the whole grid; returns one flat row per (X, R, train, eval)."""
    for name, path in {**cfg.train_corpora, **cfg.eval_corpora}.items():
        if not (Path(path) / "corpus.json").is_file():
            raise ConfigError(f"corpus {name!r} not found at {path}")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep_config.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)

    jobs = [
        (cfg.to_dict(), x, r, train_name, i)
        for i, train_name in enumerate(sorted(cfg.train_corpora))
        for x in cfg.x_values
        for r in cfg.r_values
    ]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            cell_results = list(pool.map(_run_cell_star, jobs))
    else:
        cell_results = [_run_cell_star(job) for job in jobs]

    rows = []
    for cell in cell_results:
        base = {
            "x": cell["x"],
            "r": cell["r"],
            "rf_seconds": cell.get("rf_seconds"),
            "param_count": cell.get("param_count"),
            "train_corpus": cell["train_corpus"],
            "seed": cell["seed"],
            "wall_clock_s": cell["wall_clock_s"],
        }
        if "error" in cell:
            rows.append({**base, "eval_corpus": None, "error": cell["error"]})
            continue
        for eval_name, aggregates in sorted(cell["evals"].items()):
            rows.append(
                {
                    **base,
                    "eval_corpus": eval_name,
                    "sisdr": aggregates["mean_sisdr"],
                    "delta_sisdr": aggregates["mean_delta_sisdr"],
                }
            )

    with open(out_dir / "results.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    for train_name in sorted(cfg.train_corpora):
        for eval_name in sorted(cfg.eval_corpora):
            pair_rows = [
                r
                for r in rows
                if r["train_corpus"] == train_name and r.get("eval_corpus") == eval_name
            ]
            if pair_rows:
                write_grid_csv(
                    out_dir / f"grid_delta_sisdr_{train_name}_{eval_name}.csv",
                    pair_rows,
                    "delta_sisdr",
                )
    return rows


def _run_cell_star(args):
    return _run_cell(*args)


def format_float(value: float) -> str:
    """Six significant digits, the package-wide convention for emitted text."""
    return f"{value:.6g}"


def grid_csv_rows(rows: list[dict], metric: str) -> list[list[str]]:
    """Grid layout with repeats as rows and stack depth as columns."""
    x_values = sorted({row["x"] for row in rows})
    r_values = sorted({row["r"] for row in rows})
    cells = {(row["x"], row["r"]): row.get(metric) for row in rows}
    table = [["R\\X"] + [str(x) for x in x_values]]
    for r in r_values:
        line = [str(r)]
        for x in x_values:
            value = cells.get((x, r))
            line.append("" if value is None else format_float(value))
        table.append(line)
    return table


def write_grid_csv(path, rows: list[dict], metric: str) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(grid_csv_rows(rows, metric))


def _pairings(rows: list[dict]) -> list[tuple[str, str]]:
    return sorted(
        {
            (row["train_corpus"], row["eval_corpus"])
            for row in rows
            if row.get("eval_corpus") is not None
        }
    )


def scatter_rows(rows: list[dict]) -> list[dict]:
    """Per-cell points for metric-vs-receptive-field scatter plots."""
    out = []
    for row in rows:
        if row.get("eval_corpus") is None:
            continue
        out.append(
            {
                "train_corpus": row["train_corpus"],
                "eval_corpus": row["eval_corpus"],
                "x": row["x"],
                "r": row["r"],
                "rf_seconds": row["rf_seconds"],
                "param_count": row["param_count"],
                "sisdr": row["sisdr"],
                "delta_sisdr": row["delta_sisdr"],
            }
        )
    return out


def select_best(rows: list[dict], metric: str) -> dict:
    """Highest metric wins; ties break toward the larger stack depth X."""
    return max(rows, key=lambda row: (row[metric], row["x"]))


def best_per_block_count(rows: list[dict], metric: str = "delta_sisdr") -> list[dict]:
    """Best cell for each total block count X*R, per corpus pairing."""
    out = []
    for train_name, eval_name in _pairings(rows):
        pair_rows = [
            r
            for r in rows
            if r["train_corpus"] == train_name and r.get("eval_corpus") == eval_name
        ]
        by_blocks: dict[int, list[dict]] = {}
        for row in pair_rows:
            by_blocks.setdefault(row["x"] * row["r"], []).append(row)
        for blocks in sorted(by_blocks):
            best = select_best(by_blocks[blocks], metric)
            out.append({"block_count": blocks, **best})
    return out


def best_cells(rows: list[dict], metric: str = "sisdr") -> list[dict]:
    """Best cell per (train, eval) pairing; one summary row each."""
    out = []
    for train_name, eval_name in _pairings(rows):
        pair_rows = [
            r
            for r in rows
            if r["train_corpus"] == train_name and r.get("eval_corpus") == eval_name
        ]
        out.append(select_best(pair_rows, metric))
    return out
