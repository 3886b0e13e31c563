"""Front-end tests: framing, filterbank, cepstra, centroids, stacking,
normalization, and the dump formats.  Oracles are independent loop-based
implementations computed here, never the code under test."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from visemeflow import audio_features as af
from visemeflow.errors import AudioFormatError, DataFormatError, ShapeError


def tone(freq, seconds=1.0, amplitude=0.5):
    t = np.arange(int(seconds * af.SAMPLE_RATE)) / af.SAMPLE_RATE
    return (amplitude * np.sin(2 * np.pi * freq * t) * 32767).astype(np.int16)


class TestFraming:
    def test_one_second_clip_yields_98_frames_of_dim_65(self):
        feats = af.extract_features(af.AudioClip(np.zeros(16000, np.int16)))
        assert feats.shape == (98, 65)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=400, max_value=160000))
    def test_frame_count_formula(self, n):
        feats = af.extract_features(af.AudioClip(np.zeros(n, np.int16)))
        assert feats.shape[0] == (n - 400) // 160 + 1

    def test_determinism_bit_identical(self):
        clip = af.AudioClip(tone(313.0))
        a = af.extract_features(clip)
        b = af.extract_features(af.AudioClip(clip.samples.copy()))
        assert np.array_equal(a, b)

    def test_wrong_sample_rate_rejected(self):
        with pytest.raises(AudioFormatError, match="resample externally"):
            af.extract_features(af.AudioClip(np.zeros(44100, np.int16), 44100))

    def test_short_clip_rejected(self):
        with pytest.raises(AudioFormatError, match="window"):
            af.extract_features(af.AudioClip(np.zeros(399, np.int16)))


class TestSilenceConventions:
    def test_all_zero_samples(self):
        feats = af.extract_features(af.AudioClip(np.zeros(8000, np.int16)))
        assert np.allclose(feats[:, af.MFB_SLICE], np.log(1e-10), atol=0)
        assert np.isfinite(feats[:, af.MFCC_SLICE]).all()
        centers = af._MEL_BINS[1 : af.N_MELS + 1] / (af.NFFT // 2)
        assert np.allclose(feats[:, af.SSC_SLICE], centers[None, :], atol=0)

    def test_ssc_bounds(self):
        feats = af.extract_features(af.AudioClip(tone(700.0)))
        ssc = feats[:, af.SSC_SLICE]
        assert ssc.min() >= 0.0 and ssc.max() <= 1.0


class TestFilterbank:
    def test_partition_of_unity_between_first_and_last_apex(self):
        weights = af._FBANK.sum(axis=0)
        lo, hi = af._MEL_BINS[1], af._MEL_BINS[af.N_MELS]
        assert np.abs(weights[lo : hi + 1] - 1.0).max() < 1e-6

    def test_band_edges_cover_zero_to_nyquist(self):
        assert af._MEL_BINS[0] >= 0
        assert af._MEL_BINS[-1] == af.NFFT // 2


class TestSpectralOracles:
    def test_mfcc_matches_naive_dct(self):
        rng = np.random.default_rng(0)
        clip = af.AudioClip((rng.uniform(-0.5, 0.5, 4000) * 32767).astype(np.int16))
        feats = af.extract_features(clip)
        mfb = feats[:, af.MFB_SLICE]
        n = af.N_MELS
        naive = np.zeros((feats.shape[0], af.N_MFCC))
        for k in range(af.N_MFCC):
            scale = np.sqrt(1.0 / n) if k == 0 else np.sqrt(2.0 / n)
            for j in range(n):
                naive[:, k] += mfb[:, j] * np.cos(np.pi * k * (2 * j + 1) / (2 * n))
            naive[:, k] *= scale
        assert np.abs(naive - feats[:, af.MFCC_SLICE]).max() < 1e-9

    def test_sine_centroid_against_direct_dft_oracle(self):
        clip = af.AudioClip(tone(440.0))
        feats = af.extract_features(clip)
        # which band holds 440 Hz: the filter with the largest weight there
        bin_440 = int(round(440.0 / (af.SAMPLE_RATE / af.NFFT)))
        band = int(np.argmax(af._FBANK[:, bin_440]))
        ssc = feats[40, af.SSC_SLICE.start + band]
        assert abs(ssc - 440.0 / 8000.0) <= 0.02 * (440.0 / 8000.0) + 1e-3

        # oracle: direct DFT of the same pre-emphasized, windowed frame
        emphasized = af.preemphasize(clip.samples)
        w = emphasized[40 * 160 : 40 * 160 + 400] * np.hamming(400)
        k = np.arange(af.NFFT // 2 + 1)
        n = np.arange(400)
        basis = np.exp(-2j * np.pi * k[:, None] * n[None, :] / af.NFFT)
        power = np.abs(basis @ w) ** 2 / af.NFFT
        fb = af._FBANK[band]
        fnorm = k / (af.NFFT // 2)
        oracle = (fb * power * fnorm).sum() / (fb * power).sum()
        assert abs(ssc - oracle) < 1e-9


class TestContextStacking:
    def test_middle_frame_concatenates_38_to_61(self):
        feats = np.arange(100, dtype=float)[:, None] * np.ones((1, 65))
        ctx = af.stack_context(feats, 50)
        assert ctx.shape == (1560,)
        assert np.array_equal(ctx.reshape(24, 65)[:, 0], np.arange(38, 62, dtype=float))

    def test_left_edge_replicates_first_frame(self):
        feats = np.arange(30, dtype=float)[:, None] * np.ones((1, 65))
        ctx = af.stack_context(feats, 0).reshape(24, 65)
        assert np.array_equal(ctx[:13, 0], np.zeros(13))
        assert np.array_equal(ctx[13:, 0], np.arange(1, 12, dtype=float))

    def test_center_slot_is_identity(self):
        rng = np.random.default_rng(1)
        feats = rng.normal(size=(40, 65))
        for t in (0, 7, 39):
            ctx = af.stack_context(feats, t)
            assert np.array_equal(ctx[af.CENTER_SLICE], feats[t])

    def test_stack_all_matches_per_frame(self):
        rng = np.random.default_rng(2)
        feats = rng.normal(size=(50, 65))
        allc = af.stack_all_contexts(feats)
        assert allc.shape == (50, 1560)
        for t in (0, 11, 25, 49):
            assert np.array_equal(allc[t], af.stack_context(feats, t))

    def test_empty_sequence_rejected(self):
        with pytest.raises(ShapeError):
            af.stack_context(np.zeros((0, 65)), 0)
        with pytest.raises(ShapeError):
            af.stack_context(np.zeros((10, 65)), 10)


class TestNormalization:
    def test_mean_input_maps_to_zero(self):
        stats = af.FeatureStats(np.full(65, 3.0), np.full(65, 2.0))
        out = af.normalize_features(np.full((4, 65), 3.0), stats)
        assert np.array_equal(out, np.zeros((4, 65)))

    def test_identity_stats(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(6, 65))
        stats = af.FeatureStats(np.zeros(65), np.ones(65))
        assert np.array_equal(af.normalize_features(x, stats), x)

    def test_round_trip_within_1e9(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(20, 65)) * 10
        stats = af.compute_feature_stats([x])
        back = af.denormalize_features(af.normalize_features(x, stats), stats)
        assert np.abs(back - x).max() < 1e-9

    def test_dimension_mismatch_rejected(self):
        stats = af.FeatureStats(np.zeros(64), np.ones(64))
        with pytest.raises(ShapeError):
            af.normalize_features(np.zeros((3, 65)), stats)

    def test_std_floor(self):
        stats = af.compute_feature_stats([np.full((10, 65), 7.0)])
        assert (stats.std >= np.float64(np.float32(1e-8))).all()


class TestDumpFormats:
    def test_binary_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        feats = rng.normal(size=(17, 65)).astype(np.float32)
        path = tmp_path / "f.vnft"
        af.write_feature_dump(path, feats)
        assert np.array_equal(af.read_feature_dump(path), feats)
        with open(path, "rb") as fh:
            assert fh.read(4) == b"VNFT"

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.vnft"
        path.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(DataFormatError, match="magic"):
            af.read_feature_dump(path)

    def test_csv_export(self, tmp_path):
        feats = np.zeros((3, 65))
        path = tmp_path / "f.csv"
        af.write_feature_csv(path, feats)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 4
        assert lines[0].startswith("frame_index,")
