"""Dataset format and synthetic-corpus generator tests."""

import json
import struct

import numpy as np
import pytest

from visemeflow import synth
from visemeflow.dataset import ClipRecord, as_audiovisual, load_clip, load_dataset, save_clip, save_dataset
from visemeflow.errors import ConfigError, DataFormatError
from visemeflow.phoneme_table import phoneme_table_load


@pytest.fixture(scope="module")
def corpus():
    return synth.generate_corpus(2, 3, seed=101, min_frames=140, max_frames=180)


class TestDatasetFormat:
    def test_save_load_round_trip(self, corpus, tmp_path):
        save_dataset(corpus, tmp_path / "ds")
        back = load_dataset(tmp_path / "ds")
        assert [r.clip_id for r in back] == sorted(r.clip_id for r in corpus)
        orig = {r.clip_id: r for r in corpus}
        for r in back:
            o = orig[r.clip_id]
            assert np.array_equal(r.samples, o.samples)
            assert np.array_equal(r.phoneme_groups, o.phoneme_groups)
            assert np.array_equal(r.landmarks, o.landmarks)
            assert np.array_equal(r.rig, o.rig)
            assert np.array_equal(r.activations, o.activations)
            assert np.array_equal(r.jali, o.jali)
            assert r.speaker_id == o.speaker_id and r.style == o.style

    def test_partial_labels_round_trip(self, corpus, tmp_path):
        record = as_audiovisual(corpus[0])
        assert record.rig is None and record.jali is None
        save_clip(record, tmp_path / "clip")
        back = load_clip(tmp_path / "clip")
        assert back.rig is None and back.activations is None and back.jali is None
        assert np.array_equal(back.phoneme_groups, record.phoneme_groups)

    def test_frame_count_mismatch_rejected_with_clip_id(self, corpus, tmp_path):
        save_clip(corpus[0], tmp_path / "clip")
        labels = tmp_path / "clip" / "labels.bin"
        raw = bytearray(labels.read_bytes())
        raw[8:12] = struct.pack("<I", 9999)  # corrupt the frame count
        labels.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError, match=corpus[0].clip_id):
            load_clip(tmp_path / "clip")

    def test_missing_dataset_dir_rejected(self, tmp_path):
        with pytest.raises(DataFormatError):
            load_dataset(tmp_path / "nope")

    def test_activation_bitpacking_round_trip(self, tmp_path, corpus):
        r = corpus[1]
        save_clip(r, tmp_path / "c")
        back = load_clip(tmp_path / "c")
        assert back.activations.dtype == bool
        assert np.array_equal(back.activations, r.activations)

    def test_out_of_range_rig_rejected(self, corpus, tmp_path):
        bad = ClipRecord(
            clip_id="bad", speaker_id="s", style="neutral",
            samples=corpus[0].samples,
            rig=np.full((corpus[0].num_frames, 29), 1.5, np.float32),
        )
        with pytest.raises(DataFormatError, match="outside"):
            save_clip(bad, tmp_path / "bad")


class TestGenerator:
    def test_fixed_seed_reproduces_byte_identical_corpus(self):
        a = synth.generate_corpus(2, 2, seed=7, min_frames=130, max_frames=150)
        b = synth.generate_corpus(2, 2, seed=7, min_frames=130, max_frames=150)
        for ra, rb in zip(a, b):
            assert np.array_equal(ra.samples, rb.samples)
            assert np.array_equal(ra.rig, rb.rig)
            assert np.array_equal(ra.landmarks, rb.landmarks)
            assert np.array_equal(ra.jali, rb.jali)

    def test_different_seed_differs(self):
        a = synth.generate_corpus(1, 1, seed=7, min_frames=130, max_frames=150)
        b = synth.generate_corpus(1, 1, seed=8, min_frames=130, max_frames=150)
        assert not np.array_equal(a[0].samples, b[0].samples)

    def test_values_in_range_and_activation_rule(self, corpus):
        for r in corpus:
            assert r.rig.min() >= 0.0 and r.rig.max() <= 1.0
            assert r.jali.min() >= 0.0 and r.jali.max() <= 1.0
            assert np.array_equal(r.activations, r.rig > 1e-3)

    def test_every_group_in_every_speakers_corpus(self, corpus):
        by_speaker = {}
        for r in corpus:
            by_speaker.setdefault(r.speaker_id, set()).update(r.phoneme_groups.tolist())
        for speaker, groups in by_speaker.items():
            assert groups == set(range(20)), speaker

    def test_segment_midpoints_carry_dominant_viseme(self, corpus):
        r = corpus[0]
        labels = r.phoneme_groups
        bounds = [0] + (1 + np.nonzero(np.diff(labels))[0]).tolist() + [len(labels)]
        checked = 0
        for s, e in zip(bounds[:-1], bounds[1:]):
            mid = (s + e) // 2
            if e - s < 6:
                continue
            dominant = int(np.argmax(r.rig[mid, :20]))
            assert dominant == labels[mid]
            checked += 1
        assert checked > 5

    def test_invalid_speaker_count_rejected(self):
        with pytest.raises(ConfigError):
            synth.generate_corpus(0, 3, seed=0)

    def test_styles_alternate(self, corpus):
        styles = {r.clip_id: r.style for r in corpus}
        assert styles["s00_c000"] == "neutral"
        assert styles["s00_c001"] == "expressive"

    def test_audio_is_nontrivial(self, corpus):
        for r in corpus:
            assert np.abs(r.samples).max() > 1000


class TestPhonemeTable:
    def test_default_table_has_20_groups(self):
        table = phoneme_table_load()
        assert len(table.groups) == 20

    def test_f_and_v_map_to_same_group(self):
        table = phoneme_table_load()
        assert table.group_of("f") == table.group_of("v")

    def test_symbols_unique_across_groups(self):
        table = phoneme_table_load()
        symbols = [p for g in table.groups for p in g.phonemes]
        assert len(symbols) == len(set(symbols))

    def test_duplicate_symbol_rejected(self, tmp_path):
        table = phoneme_table_load()
        doc = {
            "groups": [
                {"id": g.group_id, "name": g.name, "phonemes": list(g.phonemes)}
                for g in table.groups
            ]
        }
        doc["groups"][1]["phonemes"].append("b")  # already in group 0
        path = tmp_path / "dup.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(DataFormatError, match="appears in groups"):
            phoneme_table_load(path)

    def test_wrong_group_count_rejected(self, tmp_path):
        path = tmp_path / "short.json"
        path.write_text(json.dumps({"groups": [{"id": 0, "name": "A", "phonemes": ["a"]}]}))
        with pytest.raises(DataFormatError, match="expected 20"):
            phoneme_table_load(path)

    def test_user_override_loads(self, tmp_path):
        table = phoneme_table_load()
        doc = {
            "groups": [
                {"id": g.group_id, "name": g.name.lower(), "phonemes": list(g.phonemes)}
                for g in table.groups
            ]
        }
        path = tmp_path / "custom.json"
        path.write_text(json.dumps(doc))
        custom = phoneme_table_load(path)
        assert custom.groups[0].name == table.groups[0].name.lower()
