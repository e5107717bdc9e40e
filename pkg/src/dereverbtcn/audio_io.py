"""Mono 16-bit PCM WAV reading and writing.

Files are RIFF PCM, 16-bit signed little-endian, single channel. The
in-memory representation is float64 in [-1, 1) with the fixed scaling
``float = int16 / 32768`` and ``int16 = clip(round(float * 32768))``.
"""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

from .errors import IngestionError

__all__ = ["read_wav", "write_wav"]


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a mono 16-bit WAV file; returns (float64 samples, sample rate)."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            frames = w.readframes(w.getnframes())
    except (OSError, wave.Error) as exc:
        raise IngestionError(f"cannot read WAV file {path}: {exc}") from exc
    if channels != 1 or width != 2:
        raise IngestionError(
            f"{path}: expected mono 16-bit PCM, got {channels} channel(s) at {8 * width} bits"
        )
    samples = np.frombuffer(frames, dtype="<i2").astype(np.float64) / 32768.0
    return samples, rate


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write float64 samples as mono 16-bit PCM; values are clipped to [-1, 1)."""
    quantized = np.clip(np.rint(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(quantized.astype("<i2").tobytes())
