import json
import math
from pathlib import Path

import numpy as np
import pytest

from dereverbtcn import audio_io
from dereverbtcn.acoustics import (
    AudioClip,
    RIRSpec,
    estimate_rt60,
    frame_blocks,
    frame_count,
    generate_rir,
    make_corpus,
    pad_or_truncate,
    reverberate,
    synth_speech_like,
)
from dereverbtcn.autodiff import overlap_add
from dereverbtcn.errors import (
    ConfigError,
    EstimationError,
    IngestionError,
    InputError,
)

FS = 8000


class TestRIRGeneration:
    def test_deterministic_for_seed(self):
        spec = RIRSpec(rt60=0.4, seed=123)
        np.testing.assert_array_equal(generate_rir(spec), generate_rir(spec))

    def test_tiny_rt60_is_almost_pure_impulse(self, rng):
        spec = RIRSpec(rt60=0.001, direct_delay=5, direct_gain=1.0, length=200, seed=0)
        h = generate_rir(spec)
        assert h[5] == 1.0
        assert np.sum(np.abs(np.delete(h, 5))) < 1e-6
        dry = AudioClip(rng.normal(size=500), FS, "dry")
        mix = reverberate(dry, h)
        np.testing.assert_allclose(mix.reverberant.samples[5:], dry.samples[:-5], atol=1e-6)

    def test_target_rt60_realized(self):
        h = generate_rir(RIRSpec(rt60=0.5, seed=21))
        assert 0.45 <= estimate_rt60(h, FS) <= 0.55

    def test_rejects_non_positive_rt60(self):
        with pytest.raises(ConfigError):
            RIRSpec(rt60=0.0)

    def test_rejects_too_short_length(self):
        with pytest.raises(ConfigError):
            RIRSpec(rt60=1.0, length=100)


class TestReverberate:
    def test_unit_impulse_is_identity(self, rng):
        dry = AudioClip(rng.normal(size=2000), FS, "dry")
        h = np.zeros(64)
        h[0] = 1.0
        mix = reverberate(dry, h)
        np.testing.assert_array_equal(mix.reverberant.samples, dry.samples)
        np.testing.assert_array_equal(mix.direct.samples, dry.samples)
        np.testing.assert_allclose(
            mix.reverberant.samples - mix.direct.samples, 0.0, atol=1e-12
        )

    def test_single_delayed_tap(self, rng):
        dry = AudioClip(rng.normal(size=100), FS, "dry")
        mix = reverberate(dry, np.array([0.0, 0.5]))
        np.testing.assert_allclose(mix.reverberant.samples[1:], 0.5 * dry.samples[:-1], atol=1e-12)
        assert mix.reverberant.samples[0] == pytest.approx(0.0, abs=1e-12)

    def test_energy_bound(self, rng):
        dry = AudioClip(rng.normal(size=1500), FS, "dry")
        h = generate_rir(RIRSpec(rt60=0.2, seed=3))
        mix = reverberate(dry, h)
        full = np.sum(mix.reverberant.samples**2)
        bound = (np.sum(np.abs(h)) ** 2) * np.sum(dry.samples**2)
        assert full <= bound

    def test_empty_dry_rejected(self):
        with pytest.raises(InputError):
            reverberate(AudioClip(np.zeros(0), FS, "dry"), np.array([1.0]))

    def test_mixture_equals_convolution(self, rng):
        dry = AudioClip(rng.normal(size=1200), FS, "dry")
        h = generate_rir(RIRSpec(rt60=0.15, direct_delay=4, direct_gain=0.7, seed=9))
        mix = reverberate(dry, h)
        reference = np.convolve(dry.samples, h)[: len(dry)]
        np.testing.assert_allclose(mix.reverberant.samples, reference, atol=1e-10)

    def test_decomposition_splits_at_direct_tap(self, rng):
        dry = AudioClip(rng.normal(size=1200), FS, "dry")
        h = generate_rir(RIRSpec(rt60=0.15, direct_delay=4, direct_gain=0.7, seed=9))
        mix = reverberate(dry, h)
        assert mix.direct.samples[4] == pytest.approx(0.7 * dry.samples[0])
        tail = h.copy()
        tail[4] = 0.0
        tail_conv = np.convolve(dry.samples, tail)[: len(dry)]
        np.testing.assert_allclose(
            mix.reverberant.samples - mix.direct.samples, tail_conv, atol=1e-10
        )
        # reconstruction is exact by construction
        np.testing.assert_array_equal(
            mix.direct.samples + (mix.reverberant.samples - mix.direct.samples),
            mix.reverberant.samples,
        )


class TestEstimateRT60:
    def test_pure_exponential_decay(self):
        tau = 0.5 / (3.0 * math.log(10.0))  # rt60 of exactly 0.5 s
        t = np.arange(int(0.7 * FS)) / FS
        h = np.exp(-t / tau)
        assert estimate_rt60(h, FS) == pytest.approx(0.5, rel=0.02)

    def test_unit_impulse_rejected(self):
        h = np.zeros(100)
        h[0] = 1.0
        with pytest.raises(EstimationError):
            estimate_rt60(h, FS)

    def test_zero_energy_rejected(self):
        with pytest.raises(EstimationError):
            estimate_rt60(np.zeros(100), FS)

    @pytest.mark.parametrize("rt60", [0.1, 0.3, 0.5, 1.0, 2.0, 3.0])
    def test_generator_estimator_round_trip(self, rt60):
        for seed in (0, 1):
            h = generate_rir(RIRSpec(rt60=rt60, direct_delay=12, direct_gain=0.8, seed=seed))
            assert estimate_rt60(h, FS) == pytest.approx(rt60, rel=0.10)


class TestFraming:
    def test_three_blocks_at_32_samples(self):
        x = np.arange(32, dtype=float)
        blocks = frame_blocks(x, 16)
        assert blocks.shape == (3, 16)
        for i, offset in enumerate((0, 8, 16)):
            np.testing.assert_array_equal(blocks.data[i], x[offset : offset + 16])

    def test_single_block(self):
        x = np.arange(16, dtype=float)
        blocks = frame_blocks(x, 16)
        assert blocks.shape == (1, 16)
        np.testing.assert_array_equal(blocks.data[0], x)

    def test_round_trip_with_interior_halving(self, rng):
        x = rng.normal(size=64)
        blocks = frame_blocks(x, 16)
        summed = overlap_add(blocks, 8).data
        summed[8:-8] /= 2.0
        np.testing.assert_allclose(summed, x, atol=1e-12)

    def test_count_formula_for_hop_multiples(self):
        rng = np.random.default_rng(5)
        block_len = 16
        for _ in range(20):
            k = int(rng.integers(2, 64))
            n = k * (block_len // 2)
            assert frame_count(n, block_len) == 2 * n // block_len - 1
            assert frame_blocks(np.zeros(n), block_len).shape[0] == 2 * n // block_len - 1

    def test_end_padding_covers_last_sample(self):
        blocks = frame_blocks(np.ones(20), 16)
        # 20 samples pad to 24 -> 2 blocks; final sample index 19 is inside block 1
        assert blocks.shape == (2, 16)
        assert blocks.data[1, 11] == 1.0
        assert blocks.data[1, 12] == 0.0

    def test_too_short_rejected(self):
        with pytest.raises(InputError):
            frame_blocks(np.ones(7), 16)


class TestPadOrTruncate:
    def test_truncates_five_seconds_to_four(self):
        clip = AudioClip(np.ones(5 * FS), FS, "dry")
        assert len(pad_or_truncate(clip, 4.0)) == 32000

    def test_pads_three_seconds_to_four(self):
        clip = AudioClip(np.ones(3 * FS), FS, "dry")
        out = pad_or_truncate(clip, 4.0)
        assert len(out) == 32000
        np.testing.assert_array_equal(out.samples[24000:], np.zeros(8000))

    def test_exact_length_unchanged(self, rng):
        clip = AudioClip(rng.normal(size=32000), FS, "dry")
        np.testing.assert_array_equal(pad_or_truncate(clip, 4.0).samples, clip.samples)

    def test_rejects_non_positive_target(self):
        with pytest.raises(InputError):
            pad_or_truncate(AudioClip(np.ones(10), FS), 0.0)


class TestSyntheticSource:
    def test_deterministic(self):
        a = synth_speech_like(1.0, FS, np.random.default_rng(4)).samples
        b = synth_speech_like(1.0, FS, np.random.default_rng(4)).samples
        np.testing.assert_array_equal(a, b)

    def test_has_energy_and_pauses(self):
        clip = synth_speech_like(2.0, FS, np.random.default_rng(11))
        assert np.max(np.abs(clip.samples)) == pytest.approx(0.9)
        # some stretch of near-silence should exist (inter-burst pause)
        frame = 160
        frames = clip.samples[: len(clip) // frame * frame].reshape(-1, frame)
        rms = np.sqrt((frames**2).mean(axis=1))
        assert rms.min() < 0.05 * rms.max()


class TestWavIO:
    def test_round_trip_exact_for_quantized_values(self, tmp_path, rng):
        samples = np.round(rng.uniform(-0.9, 0.9, size=500) * 32768) / 32768.0
        path = tmp_path / "clip.wav"
        audio_io.write_wav(path, samples, FS)
        back, rate = audio_io.read_wav(path)
        assert rate == FS
        np.testing.assert_array_equal(back, samples)

    def test_rejects_missing_file(self, tmp_path):
        with pytest.raises(IngestionError):
            audio_io.read_wav(tmp_path / "nope.wav")


class TestMakeCorpus:
    def _file_bytes(self, root: Path) -> dict[str, bytes]:
        return {
            str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*"))
            if p.is_file()
        }

    def test_counts_and_manifest_schema(self, tmp_path):
        root = make_corpus(
            tmp_path / "c", {"train": 4, "val": 2, "test": 2}, (0.1, 1.0),
            duration=0.5, seed=7,
        )
        for split, count in (("train", 4), ("val", 2), ("test", 2)):
            lines = (root / split / "manifest.jsonl").read_text().splitlines()
            assert len(lines) == count
            for line in lines:
                row = json.loads(line)
                assert set(row) >= {
                    "id", "dry_path", "direct_path", "reverb_path",
                    "rt60_target", "rt60_measured", "alpha", "i0", "seed",
                }
                assert 0.1 <= row["rt60_target"] <= 1.0
                assert 0.5 <= row["alpha"] <= 1.0
                assert 0 <= row["i0"] <= 40
                for key in ("dry_path", "direct_path", "reverb_path"):
                    assert (root / split / row[key]).is_file()

    def test_extended_range_honored(self, tmp_path):
        root = make_corpus(
            tmp_path / "ext", {"train": 2, "val": 1, "test": 1}, (1.0, 3.0),
            duration=0.5, seed=3,
        )
        rows = [
            json.loads(line)
            for line in (root / "train" / "manifest.jsonl").read_text().splitlines()
        ]
        assert all(1.0 <= row["rt60_target"] <= 3.0 for row in rows)

    def test_byte_identical_rerun(self, tmp_path):
        kwargs = dict(counts={"train": 2, "val": 1, "test": 1}, rt60_range=(0.1, 0.4))
        a = make_corpus(tmp_path / "a", duration=0.5, seed=42, **kwargs)
        b = make_corpus(tmp_path / "b", duration=0.5, seed=42, **kwargs)
        assert self._file_bytes(a) == self._file_bytes(b)

    def test_parallel_matches_serial(self, tmp_path):
        kwargs = dict(counts={"train": 3, "val": 1, "test": 1}, rt60_range=(0.1, 0.4))
        serial = make_corpus(tmp_path / "s", duration=0.5, seed=9, workers=1, **kwargs)
        parallel = make_corpus(tmp_path / "p", duration=0.5, seed=9, workers=3, **kwargs)
        assert self._file_bytes(serial) == self._file_bytes(parallel)

    def test_different_seed_changes_bytes(self, tmp_path):
        kwargs = dict(counts={"train": 1, "val": 1, "test": 1}, rt60_range=(0.1, 0.4))
        a = make_corpus(tmp_path / "a", duration=0.5, seed=1, **kwargs)
        b = make_corpus(tmp_path / "b", duration=0.5, seed=2, **kwargs)
        assert self._file_bytes(a) != self._file_bytes(b)

    def test_measured_rt60_close_to_target(self, tmp_path):
        root = make_corpus(
            tmp_path / "m", {"train": 3, "val": 1, "test": 1}, (0.2, 0.8),
            duration=0.5, seed=5,
        )
        for split in ("train", "val", "test"):
            for line in (root / split / "manifest.jsonl").read_text().splitlines():
                row = json.loads(line)
                assert row["rt60_measured"] == pytest.approx(row["rt60_target"], rel=0.15)

    def test_user_supplied_sources(self, tmp_path, rng):
        wav = tmp_path / "src.wav"
        audio_io.write_wav(wav, rng.uniform(-0.5, 0.5, size=FS), FS)
        root = make_corpus(
            tmp_path / "u", {"train": 2, "val": 1, "test": 1}, (0.1, 0.3),
            duration=0.5, seed=1, sources=[wav],
        )
        assert (root / "corpus.json").is_file()
        meta = json.loads((root / "corpus.json").read_text())
        assert meta["source"] == [str(wav)]

    def test_missing_source_rejected(self, tmp_path):
        with pytest.raises(IngestionError):
            make_corpus(
                tmp_path / "x", {"train": 1, "val": 1, "test": 1}, (0.1, 0.3),
                sources=[tmp_path / "missing.wav"],
            )

    def test_invalid_range_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            make_corpus(tmp_path / "x", {"train": 1}, (1.0, 0.5))

    def test_zero_count_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            make_corpus(tmp_path / "x", {"train": 0}, (0.1, 0.5))
