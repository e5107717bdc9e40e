"""Synthetic reverberant data: RIR synthesis, mixing, RT60 measurement, framing.

The impulse-response model is a seeded stochastic exponential decay with an
explicit direct-path tap: deterministic given its seed, and with an
analytically controlled RT60 so the generator can be validated against
Schroeder backward integration.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sp_signal

from . import audio_io
from .autodiff import Tensor, frame_signal, pad_end
from .errors import ConfigError, EstimationError, IngestionError, InputError, ShapeError

__all__ = [
    "AudioClip",
    "RIRSpec",
    "MixtureExample",
    "generate_rir",
    "reverberate",
    "estimate_rt60",
    "frame_blocks",
    "frame_count",
    "pad_or_truncate",
    "synth_speech_like",
    "make_corpus",
]

CORPUS_SAMPLE_RATE = 8000
_DECAY_60DB = 3.0 * math.log(10.0)  # amplitude decay exponent for a 60 dB energy drop


@dataclass
class AudioClip:
    """Single-channel sample buffer with provenance."""

    samples: np.ndarray
    sample_rate: int
    role: str = "dry"  # dry | direct | reverberant | estimate

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InputError(f"clips are single-channel, got shape {self.samples.shape}")
        if not np.isfinite(self.samples).all():
            raise InputError("clip contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class RIRSpec:
    """Target RT60 plus the direct-path tap and tail parameters.

    ``early_gap`` separates the direct tap from the stochastic tail and
    ``tail_scale`` sets the tail noise standard deviation relative to a
    unit direct gain; both are pinned here so realizations are fully
    reproducible from the spec alone.
    """

    rt60: float
    sample_rate: int = CORPUS_SAMPLE_RATE
    direct_delay: int = 0
    direct_gain: float = 1.0
    length: int | None = None
    seed: int = 0
    early_gap: int = 20
    tail_scale: float = 0.2

    def __post_init__(self):
        if self.rt60 <= 0:
            raise ConfigError(f"rt60 must be positive, got {self.rt60}")
        if self.sample_rate <= 0:
            raise ConfigError("sample rate must be positive")
        if self.direct_delay < 0 or self.early_gap < 1:
            raise ConfigError("direct delay must be >= 0 and early gap >= 1")
        if self.length is not None and (
            self.length < self.direct_delay + 1 or self.length < self.rt60 * self.sample_rate
        ):
            raise ConfigError(
                f"length {self.length} too short: needs >= direct_delay+1 and >= rt60*sample_rate"
            )

    @property
    def realized_length(self) -> int:
        if self.length is not None:
            return self.length
        return self.direct_delay + int(math.ceil(self.rt60 * self.sample_rate)) + 1


@dataclass
class MixtureExample:
    """Dry source, direct-path target and reverberant mixture for one RIR."""

    dry: AudioClip
    direct: AudioClip
    reverberant: AudioClip
    rir: np.ndarray
    rt60_target: float | None = None
    seed: int | None = None


def generate_rir(spec: RIRSpec) -> np.ndarray:
    """Realize an impulse response with the requested RT60.

    The direct path is a single tap of ``direct_gain`` at ``direct_delay``;
    past the early gap the tail is zero-mean noise under an exponential
    envelope whose energy decays 60 dB over ``rt60`` seconds.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.realized_length
    h = np.zeros(n)
    h[spec.direct_delay] = spec.direct_gain
    start = spec.direct_delay + spec.early_gap
    if start < n:
        offsets = np.arange(start, n) - spec.direct_delay
        envelope = np.exp(-offsets * _DECAY_60DB / (spec.rt60 * spec.sample_rate))
        h[start:] = spec.tail_scale * rng.standard_normal(n - start) * envelope
    return h


def direct_path_of(h: np.ndarray) -> tuple[int, float]:
    """Locate the direct tap: first nonzero sample and its gain."""
    nonzero = np.flatnonzero(h)
    if nonzero.size == 0:
        raise InputError("impulse response is all zeros")
    i0 = int(nonzero[0])
    return i0, float(h[i0])


def reverberate(dry: AudioClip, h: np.ndarray) -> MixtureExample:
    """Convolve a dry clip with an RIR and split out the direct-path target.

    The RIR is split at the direct tap: the direct clip is built exactly
    from (gain, delay) and only the tail goes through the convolution, so
    ``reverberant == direct + tail_part`` holds by construction and the
    unit-impulse RIR is the exact identity. The mixture is the full linear
    convolution truncated to the dry length.
    """
    if len(dry) == 0:
        raise InputError("dry signal is empty")
    h = np.asarray(h, dtype=np.float64)
    i0, alpha = direct_path_of(h)
    direct = np.zeros_like(dry.samples)
    direct[i0:] = alpha * dry.samples[: len(dry) - i0]
    tail = h.copy()
    tail[i0] = 0.0
    if np.any(tail):
        mixture = direct + sp_signal.fftconvolve(dry.samples, tail)[: len(dry)]
    else:
        mixture = direct.copy()
    fs = dry.sample_rate
    return MixtureExample(
        dry=AudioClip(dry.samples.copy(), fs, "dry"),
        direct=AudioClip(direct, fs, "direct"),
        reverberant=AudioClip(mixture, fs, "reverberant"),
        rir=h,
    )


def estimate_rt60(h: np.ndarray, sample_rate: int) -> float:
    """Measure RT60 by Schroeder backward integration (T20 method).

    Fits a line to the -5 dB .. -25 dB stretch of the backward-integrated
    energy decay curve and extrapolates the slope to -60 dB.
    """
    h = np.asarray(h, dtype=np.float64)
    energy = h * h
    total = energy.sum()
    if total <= 0:
        raise EstimationError("impulse response has no energy")
    edc = np.cumsum(energy[::-1])[::-1]
    with np.errstate(divide="ignore"):
        edc_db = 10.0 * np.log10(np.maximum(edc / total, 1e-300))
    below5 = np.flatnonzero(edc_db <= -5.0)
    below25 = np.flatnonzero(edc_db <= -25.0)
    if below5.size == 0 or below25.size == 0:
        raise EstimationError("decay curve never reaches the fit region")
    start, stop = int(below5[0]), int(below25[0])
    if stop - start < 10:
        raise EstimationError(
            f"decay region of {stop - start} samples is too short to fit (degenerate RIR)"
        )
    t = np.arange(start, stop)
    slope, _ = np.polyfit(t, edc_db[start:stop], 1)
    if slope >= 0:
        raise EstimationError("energy decay curve is not decreasing over the fit region")
    return float(-60.0 / slope / sample_rate)


def frame_count(n_samples: int, block_len: int) -> int:
    """Number of half-overlapping blocks after end-padding to a hop multiple."""
    hop = block_len // 2
    padded = -(-n_samples // hop) * hop
    return padded // hop - 1


def frame_blocks(x, block_len: int) -> Tensor:
    """Split a signal into half-overlapping ``block_len`` rows (end-padded).

    Accepts an :class:`AudioClip`, a numpy array or a graph tensor; the
    result stays differentiable so analysis feeds straight into the model.
    """
    if isinstance(x, AudioClip):
        x = x.samples
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.ndim != 1:
        raise ShapeError(f"frame_blocks expects a 1-D signal, got {t.shape}")
    if block_len < 2 or block_len % 2:
        raise ShapeError(f"block length must be even and >= 2, got {block_len}")
    if t.size < block_len:
        raise InputError(f"signal of {t.size} samples is shorter than one {block_len} block")
    hop = block_len // 2
    padded = -(-t.size // hop) * hop
    if padded != t.size:
        t = pad_end(t, padded - t.size)
    return frame_signal(t, block_len)


def pad_or_truncate(clip: AudioClip, target_seconds: float) -> AudioClip:
    """Crop from sample zero or zero-pad at the end to an exact duration."""
    if target_seconds <= 0:
        raise InputError("target duration must be positive")
    n = int(round(target_seconds * clip.sample_rate))
    if len(clip) >= n:
        samples = clip.samples[:n].copy()
    else:
        samples = np.concatenate([clip.samples, np.zeros(n - len(clip))])
    return AudioClip(samples, clip.sample_rate, clip.role)


def _resonator_coeffs(freq: float, bandwidth: float, fs: int):
    r = math.exp(-math.pi * bandwidth / fs)
    theta = 2.0 * math.pi * freq / fs
    b = [1.0 - r]
    a = [1.0, -2.0 * r * math.cos(theta), r * r]
    return b, a


def synth_speech_like(duration: float, sample_rate: int, rng: np.random.Generator) -> AudioClip:
    """Amplitude-modulated filtered excitation with pauses, as a stand-in dry source.

    A wandering-pitch pulse train is shaped by two random resonators, mixed
    with lowpassed noise, then gated into syllable-like bursts separated by
    silences. Deterministic given the generator state.
    """
    n = int(round(duration * sample_rate))
    if n < 1:
        raise InputError("duration too short")

    # Voiced excitation: impulse train with a slowly wandering f0.
    f0 = np.clip(rng.normal(140.0, 30.0) + np.cumsum(rng.normal(0.0, 0.3, n)), 80.0, 240.0)
    phase = np.cumsum(f0 / sample_rate)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    voiced = pulses.copy()
    for _ in range(2):
        b, a = _resonator_coeffs(rng.uniform(300.0, 2500.0), rng.uniform(120.0, 300.0), sample_rate)
        voiced = sp_signal.lfilter(b, a, voiced)

    b, a = sp_signal.butter(4, 2500.0 / (sample_rate / 2.0), btype="low")
    noise = sp_signal.lfilter(b, a, rng.standard_normal(n))

    def _rms(x):
        return math.sqrt(float(np.mean(x * x))) + 1e-12

    carrier = voiced / _rms(voiced) + 0.3 * noise / _rms(noise)

    # Syllabic gating: alternating speech bursts and pauses with cosine edges.
    envelope = np.zeros(n)
    ramp = max(1, int(0.01 * sample_rate))
    pos = 0
    while pos < n:
        burst = int(rng.uniform(0.12, 0.40) * sample_rate)
        stop = min(pos + burst, n)
        seg = np.ones(stop - pos)
        k = min(ramp, seg.size // 2)
        if k > 0:
            edge = 0.5 - 0.5 * np.cos(np.linspace(0.0, math.pi, k))
            seg[:k] *= edge
            seg[-k:] *= edge[::-1]
        envelope[pos:stop] = seg * rng.uniform(0.5, 1.0)
        pos = stop + int(rng.uniform(0.06, 0.25) * sample_rate)

    out = carrier * envelope
    peak = np.max(np.abs(out))
    if peak <= 0:
        # All-pause draw; fall back to a faint tone so the clip has energy.
        out = 0.1 * np.sin(2.0 * math.pi * 220.0 * np.arange(n) / sample_rate)
        peak = np.max(np.abs(out))
    return AudioClip(0.9 * out / peak, sample_rate, "dry")


CORPUS_SCHEMA_VERSION = 1
_MANIFEST_NAME = "manifest.jsonl"


def _load_source(path, duration: float) -> AudioClip:
    samples, rate = audio_io.read_wav(path)
    if rate != CORPUS_SAMPLE_RATE:
        raise IngestionError(f"{path}: corpus sources must be {CORPUS_SAMPLE_RATE} Hz, got {rate}")
    return pad_or_truncate(AudioClip(samples, rate, "dry"), duration)


def _build_example(args):
    """Synthesize one corpus example; pure function of (seed, index, knobs)."""
    (split, index, global_index, seed, rt60_range, duration, source_path, out_dir) = args
    rng = np.random.default_rng([seed, global_index])
    rt60 = float(rng.uniform(*rt60_range))
    alpha = float(rng.uniform(0.5, 1.0))
    i0 = int(rng.integers(0, 41))
    source_seed = int(rng.integers(0, 2**31 - 1))
    rir_seed = int(rng.integers(0, 2**31 - 1))

    if source_path is None:
        dry = synth_speech_like(duration, CORPUS_SAMPLE_RATE, np.random.default_rng(source_seed))
    else:
        dry = _load_source(source_path, duration)

    spec = RIRSpec(
        rt60=rt60,
        sample_rate=CORPUS_SAMPLE_RATE,
        direct_delay=i0,
        direct_gain=alpha,
        seed=rir_seed,
    )
    h = generate_rir(spec)
    mix = reverberate(dry, h)
    rt60_measured = estimate_rt60(h, CORPUS_SAMPLE_RATE)

    # Common scaling keeps all SI-SDR relations intact while avoiding clipping.
    peak = max(
        np.max(np.abs(mix.dry.samples)),
        np.max(np.abs(mix.direct.samples)),
        np.max(np.abs(mix.reverberant.samples)),
    )
    scale_factor = 0.9 / peak if peak > 0 else 1.0

    names = {}
    for role, clip in (("dry", mix.dry), ("direct", mix.direct), ("reverb", mix.reverberant)):
        name = f"ex{index:04d}_{role}.wav"
        audio_io.write_wav(Path(out_dir) / split / name, clip.samples * scale_factor, CORPUS_SAMPLE_RATE)
        names[role] = name

    row = {
        "id": f"{split}-{index:04d}",
        "dry_path": names["dry"],
        "direct_path": names["direct"],
        "reverb_path": names["reverb"],
        "rt60_target": rt60,
        "rt60_measured": rt60_measured,
        "alpha": alpha,
        "i0": i0,
        "seed": rir_seed,
        "scale": scale_factor,
    }
    return split, index, row


def make_corpus(
    out_dir,
    counts: dict[str, int],
    rt60_range: tuple[float, float],
    *,
    duration: float = 4.0,
    seed: int = 0,
    sources: list | None = None,
    workers: int = 1,
) -> Path:
    """Generate a reverberant corpus; byte-identical for a fixed seed.

    Each example draws its RT60 uniformly from ``rt60_range``, realizes an
    RIR, mixes, and writes dry/direct/reverberant WAVs plus a JSONL manifest
    per split. Every example's RNG stream derives from (seed, example index),
    so serial and parallel generation produce identical bytes.
    """
    lo, hi = rt60_range
    if not 0 < lo < hi:
        raise ConfigError(f"rt60 range must satisfy 0 < lo < hi, got {rt60_range}")
    for split, count in counts.items():
        if count < 1:
            raise ConfigError(f"split {split!r} needs at least one example")
    if sources is not None:
        missing = [str(p) for p in sources if not Path(p).is_file()]
        if missing:
            raise IngestionError(f"source files not found: {', '.join(missing)}")

    out_dir = Path(out_dir)
    jobs = []
    global_index = 0
    for split in sorted(counts):
        (out_dir / split).mkdir(parents=True, exist_ok=True)
        for index in range(counts[split]):
            source_path = None
            if sources is not None:
                source_path = str(sources[global_index % len(sources)])
            jobs.append((split, index, global_index, seed, (lo, hi), duration, source_path, str(out_dir)))
            global_index += 1

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_build_example, jobs))
    else:
        results = [_build_example(job) for job in jobs]

    rows: dict[str, list] = {split: [] for split in counts}
    for split, index, row in results:
        rows[split].append((index, row))
    for split in sorted(counts):
        with open(out_dir / split / _MANIFEST_NAME, "w") as fh:
            for _, row in sorted(rows[split]):
                fh.write(json.dumps(row) + "\n")

    meta = {
        "schema_version": CORPUS_SCHEMA_VERSION,
        "seed": seed,
        "rt60_range": [lo, hi],
        "counts": {k: counts[k] for k in sorted(counts)},
        "duration_seconds": duration,
        "sample_rate": CORPUS_SAMPLE_RATE,
        "source": "synthetic" if sources is None else [str(p) for p in sources],
    }
    with open(out_dir / "corpus.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir
