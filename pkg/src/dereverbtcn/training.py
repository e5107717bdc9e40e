"""SI-SDR objective, improvement reporting, and the training loop.

The metric (:func:`sisdr`) is plain numpy; the loss (:func:`sisdr_loss`)
builds the same quantity through the autodiff graph so the two can be
cross-checked against each other and against finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import audio_io
from .acoustics import AudioClip, pad_or_truncate
from .autodiff import Tensor, backward, clamp, div, log, mul, neg, no_grad, scale, sub, tensor_sum
from .errors import ConfigError, InputError, NonFiniteError, ShapeError, TrainingError
from .layers import Adam
from .model import DereverbModel

__all__ = [
    "SISDR_CAP_DB",
    "sisdr",
    "sisdr_loss",
    "batch_sisdr_loss",
    "delta_sisdr",
    "EvalRecord",
    "PlateauHalving",
    "TrainSchedule",
    "Corpus",
    "CorpusExample",
    "fit",
    "FitResult",
    "evaluate",
]

# SI-SDR is unbounded for perfect or fully orthogonal estimates; cap it so
# the loss stays finite. The cap region is excluded from gradient checks.
SISDR_CAP_DB = 60.0
_ENERGY_FLOOR = 1e-30
_LOG10 = float(np.log(10.0))


def _as_samples(x) -> np.ndarray:
    if isinstance(x, AudioClip):
        return x.samples
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def sisdr(estimate, reference) -> float:
    """Scale-invariant signal-to-distortion ratio in dB, capped at +/-60.

    Projects the estimate onto the reference (no mean subtraction) and
    compares the projected target energy against the residual energy.
    """
    est = _as_samples(estimate)
    ref = _as_samples(reference)
    if est.shape != ref.shape:
        raise ShapeError(f"length mismatch: {est.shape} vs {ref.shape}")
    ref_energy = float(ref @ ref)
    if ref_energy <= 0:
        raise InputError("reference signal has zero energy")
    target = (float(est @ ref) / ref_energy) * ref
    residual = est - target
    num = max(float(target @ target), _ENERGY_FLOOR)
    den = max(float(residual @ residual), _ENERGY_FLOOR)
    value = 10.0 * np.log10(num / den)
    return float(np.clip(value, -SISDR_CAP_DB, SISDR_CAP_DB))


def sisdr_loss(estimate: Tensor, reference) -> Tensor:
    """Negative SI-SDR as a differentiable scalar graph node."""
    ref = Tensor(_as_samples(reference))
    if estimate.shape != ref.shape:
        raise ShapeError(f"length mismatch: {estimate.shape} vs {ref.shape}")
    ref_energy = float(ref.data @ ref.data)
    if ref_energy <= 0:
        raise InputError("reference signal has zero energy")
    projection = div(tensor_sum(mul(estimate, ref)), Tensor(ref_energy))
    target = mul(ref, projection)
    residual = sub(estimate, target)
    num = clamp(tensor_sum(mul(target, target)), lo=_ENERGY_FLOOR)
    den = clamp(tensor_sum(mul(residual, residual)), lo=_ENERGY_FLOOR)
    value_db = scale(log(div(num, den)), 10.0 / _LOG10)
    return neg(clamp(value_db, lo=-SISDR_CAP_DB, hi=SISDR_CAP_DB))


def batch_sisdr_loss(pairs: list[tuple[Tensor, np.ndarray]]) -> Tensor:
    """Mean negative SI-SDR over (estimate, reference) pairs."""
    if not pairs:
        raise InputError("batch is empty")
    total = sisdr_loss(*pairs[0])
    for est, ref in pairs[1:]:
        total = total + sisdr_loss(est, ref)
    return scale(total, 1.0 / len(pairs))


def delta_sisdr(estimate, reverberant, direct) -> float:
    """Improvement of the estimate over the unprocessed reverberant input, dB."""
    return sisdr(estimate, direct) - sisdr(reverberant, direct)


@dataclass
class EvalRecord:
    example_id: str
    sisdr_estimate: float
    sisdr_input: float

    @property
    def delta_sisdr(self) -> float:
        return self.sisdr_estimate - self.sisdr_input

    def to_dict(self) -> dict:
        return {
            "id": self.example_id,
            "sisdr_estimate": self.sisdr_estimate,
            "sisdr_input": self.sisdr_input,
            "delta_sisdr": self.delta_sisdr,
        }


class PlateauHalving:
    """Halve the learning rate after `patience` epochs without improvement.

    Improvement means a strictly greater score than the best seen so far.
    The stale counter resets both on improvement and on each halving.
    """

    def __init__(self, patience: int = 3, factor: float = 0.5):
        if patience < 1:
            raise ConfigError("patience must be at least one epoch")
        self.patience = patience
        self.factor = factor
        self.best: float | None = None
        self.stale = 0

    def update(self, score: float) -> bool:
        """Record an epoch score; returns True when the lr should halve now."""
        if self.best is None or score > self.best:
            self.best = score
            self.stale = 0
            return False
        self.stale += 1
        if self.stale >= self.patience:
            self.stale = 0
            return True
        return False


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 100
    lr: float = 1e-3
    patience: int = 3
    clip_seconds: float = 4.0
    batch_size: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch size must be positive")
        if self.lr <= 0 or self.clip_seconds <= 0:
            raise ConfigError("learning rate and clip length must be positive")


@dataclass
class CorpusExample:
    example_id: str
    directory: Path
    row: dict

    def load(self) -> tuple[AudioClip, AudioClip, AudioClip]:
        clips = []
        for key, role in (("dry_path", "dry"), ("direct_path", "direct"), ("reverb_path", "reverberant")):
            samples, rate = audio_io.read_wav(self.directory / self.row[key])
            clips.append(AudioClip(samples, rate, role))
        return tuple(clips)


class Corpus:
    """Split manifests plus lazily loaded WAV triples."""

    def __init__(self, root, splits: dict[str, list[CorpusExample]], meta: dict):
        self.root = Path(root)
        self.splits = splits
        self.meta = meta

    @property
    def sample_rate(self) -> int:
        return int(self.meta["sample_rate"])

    @classmethod
    def load(cls, root) -> "Corpus":
        root = Path(root)
        meta_path = root / "corpus.json"
        if not meta_path.is_file():
            raise ConfigError(f"{root} is not a corpus directory (missing corpus.json)")
        meta = json.loads(meta_path.read_text())
        splits: dict[str, list[CorpusExample]] = {}
        for split_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            manifest = split_dir / "manifest.jsonl"
            if not manifest.is_file():
                continue
            examples = []
            for line in manifest.read_text().splitlines():
                row = json.loads(line)
                examples.append(CorpusExample(row["id"], split_dir, row))
            splits[split_dir.name] = examples
        return cls(root, splits, meta)

    def split(self, name: str) -> list[CorpusExample]:
        if name not in self.splits or not self.splits[name]:
            raise ConfigError(f"corpus has no examples in split {name!r}")
        return self.splits[name]


@dataclass
class FitResult:
    history: list[dict]
    best_checkpoint: Path
    best_val_sisdr: float


def _dump_abort_state(out_dir: Path, state: dict) -> Path:
    path = out_dir / "abort_state.json"
    with open(path, "w") as fh:
        json.dump(state, fh, indent=2, sort_keys=True)
    return path


def fit(
    model: DereverbModel,
    corpus: Corpus,
    schedule: TrainSchedule,
    out_dir,
) -> FitResult:
    """Train with Adam on negative SI-SDR; halve the lr on validation plateaus.

    Writes ``history.jsonl`` (one epoch per line) and keeps the checkpoint
    with the best validation SI-SDR at ``checkpoint_best.npz``. A non-finite
    loss aborts with a diagnostic dump.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train = corpus.split("train")
    val = corpus.split("val")
    if corpus.sample_rate != model.cfg.sample_rate:
        raise ConfigError(
            f"corpus at {corpus.sample_rate} Hz does not match model at {model.cfg.sample_rate} Hz"
        )

    def clipped(example: CorpusExample) -> tuple[np.ndarray, np.ndarray]:
        _, direct, reverb = example.load()
        x = pad_or_truncate(reverb, schedule.clip_seconds).samples
        y = pad_or_truncate(direct, schedule.clip_seconds).samples
        return x, y

    optimizer = Adam(model.parameters(), lr=schedule.lr)
    scheduler = PlateauHalving(patience=schedule.patience)
    history: list[dict] = []
    best_val = -np.inf
    best_path = out_dir / "checkpoint_best.npz"
    history_path = out_dir / "history.jsonl"

    with open(history_path, "w") as history_fh:
        for epoch in range(1, schedule.epochs + 1):
            order = np.random.default_rng([schedule.seed, epoch]).permutation(len(train))
            epoch_losses = []
            for start in range(0, len(order), schedule.batch_size):
                batch = [train[i] for i in order[start : start + schedule.batch_size]]
                optimizer.zero_grad()
                try:
                    pairs = []
                    for example in batch:
                        x, y = clipped(example)
                        pairs.append((model.forward(x), y))
                    loss = batch_sisdr_loss(pairs)
                    backward(loss)
                except NonFiniteError as exc:
                    dump = _dump_abort_state(
                        out_dir,
                        {
                            "epoch": epoch,
                            "batch_ids": [e.example_id for e in batch],
                            "lr": optimizer.lr,
                            "error": str(exc),
                            "param_norms": {
                                name: float(np.linalg.norm(t.data))
                                for name, t in model.named_parameters()
                            },
                        },
                    )
                    raise TrainingError(f"non-finite loss; state dumped to {dump}") from exc
                optimizer.step()
                epoch_losses.append(loss.item())

            with no_grad():
                val_scores = []
                for example in val:
                    x, y = clipped(example)
                    val_scores.append(sisdr(model.forward(x), y))
            val_sisdr = float(np.mean(val_scores))

            if val_sisdr > best_val:
                best_val = val_sisdr
                model.save(best_path)
            lr_used = optimizer.lr
            halved = scheduler.update(val_sisdr)
            if halved:
                optimizer.lr *= 0.5

            row = {
                "epoch": epoch,
                "lr": lr_used,
                "train_loss": float(np.mean(epoch_losses)),
                "val_sisdr": val_sisdr,
                "halved": halved,
                "optimizer": "adam",
                "batch_size": schedule.batch_size,
            }
            history.append(row)
            history_fh.write(json.dumps(row) + "\n")
            history_fh.flush()

    return FitResult(history=history, best_checkpoint=best_path, best_val_sisdr=float(best_val))


def evaluate(model: DereverbModel, examples: list[CorpusExample]) -> tuple[list[EvalRecord], dict]:
    """Deterministic pass over a split; per-example records plus mean scores."""
    records = []
    with no_grad():
        for example in examples:
            _, direct, reverb = example.load()
            if reverb.sample_rate != model.cfg.sample_rate:
                raise ConfigError(
                    f"example {example.example_id} at {reverb.sample_rate} Hz does not "
                    f"match model at {model.cfg.sample_rate} Hz"
                )
            estimate = model.forward(reverb.samples)
            records.append(
                EvalRecord(
                    example_id=example.example_id,
                    sisdr_estimate=sisdr(estimate, direct),
                    sisdr_input=sisdr(reverb, direct),
                )
            )
    aggregates = {
        "mean_sisdr": float(np.mean([r.sisdr_estimate for r in records])),
        "mean_delta_sisdr": float(np.mean([r.delta_sisdr for r in records])),
        "count": len(records),
    }
    return records, aggregates
