"""End-to-end command-line tests over the installed entry point."""

import json
import subprocess
import sys

import numpy as np
import pytest

from visemeflow import model
from visemeflow.checkpoint import save_checkpoint
from visemeflow.cli import main
from visemeflow.dataset import load_dataset
from visemeflow.wav_io import write_wav


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "corpus"
    assert main([
        "synth-data", "--out-dir", str(root), "--speakers", "2",
        "--clips-per-speaker", "2", "--seed", "3",
        "--min-frames", "90", "--max-frames", "110",
    ]) == 0
    return root


@pytest.fixture(scope="module")
def model_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "random.vnck"
    params = model.init_model_params(np.random.default_rng(12))
    save_checkpoint(path, params)
    return path


@pytest.fixture(scope="module")
def wav_path(tmp_path_factory, data_dir):
    records = load_dataset(data_dir)
    path = tmp_path_factory.mktemp("cli") / "clip.wav"
    write_wav(path, records[0].samples)
    return path


class TestBasicCommands:
    def test_synth_data_wrote_clips(self, data_dir):
        records = load_dataset(data_dir)
        assert len(records) == 4

    def test_extract_features(self, data_dir, wav_path, tmp_path, capsys):
        out = tmp_path / "f.vnft"
        csv_out = tmp_path / "f.csv"
        assert main([
            "extract-features", "--audio", str(wav_path),
            "--out", str(out), "--csv", str(csv_out),
        ]) == 0
        captured = capsys.readouterr().err
        assert "config seed=0" in captured
        assert out.exists() and csv_out.exists()

    def test_infer_writes_31_track_csv(self, model_path, wav_path, tmp_path):
        out = tmp_path / "curves.csv"
        assert main([
            "infer", "--model", str(model_path), "--audio", str(wav_path),
            "--out", str(out),
        ]) == 0
        header = out.read_text().splitlines()[0].split(",")
        assert len(header) == 2 + 29 + 2 + 29

    def test_infer_keyframe_json(self, model_path, wav_path, tmp_path):
        out = tmp_path / "curves.json"
        assert main([
            "infer", "--model", str(model_path), "--audio", str(wav_path),
            "--out", str(out), "--format", "keyframe-json",
        ]) == 0
        doc = json.loads(out.read_text())
        assert len(doc["tracks"]) == 31

    def test_gradcheck_passes(self, capsys):
        assert main(["gradcheck", "--seed", "7"]) == 0
        assert "max relative gradient error" in capsys.readouterr().out


class TestTrainingCommands:
    def test_pretrain_then_train_then_calibrate(self, data_dir, tmp_path):
        pre_dir = tmp_path / "pre"
        assert main([
            "pretrain", "--data", str(data_dir), "--out-dir", str(pre_dir),
            "--iters", "2", "--batch-size", "1", "--subsequence-len", "40",
            "--log-every", "1",
        ]) == 0
        assert (pre_dir / "pretrained.vnck").exists()
        assert (pre_dir / "loss_log.csv").exists()

        train_dir = tmp_path / "joint"
        assert main([
            "train", "--data", str(data_dir), "--out-dir", str(train_dir),
            "--init", str(pre_dir / "pretrained.vnck"), "--iters", "2",
            "--batch-size", "1", "--subsequence-len", "40",
            "--holdout-fraction", "0.25",
        ]) == 0
        assert (train_dir / "model.vnck").exists()

        calibrated = tmp_path / "calibrated.vnck"
        assert main([
            "calibrate", "--model", str(train_dir / "model.vnck"),
            "--data", str(data_dir), "--out", str(calibrated),
        ]) == 0
        assert calibrated.exists()


class TestStreamSubprocess:
    def test_stream_matches_infer(self, model_path, wav_path, tmp_path, data_dir):
        out_csv = tmp_path / "batch.csv"
        assert main([
            "infer", "--model", str(model_path), "--audio", str(wav_path),
            "--out", str(out_csv),
        ]) == 0
        records = load_dataset(data_dir)
        pcm = records[0].samples.astype("<i2").tobytes()
        proc = subprocess.run(
            [sys.executable, "-m", "visemeflow.cli", "stream",
             "--model", str(model_path), "--chunk-size", "333"],
            input=pcm, capture_output=True, check=True,
        )
        stream_lines = proc.stdout.decode().strip().splitlines()
        batch_lines = out_csv.read_text().strip().splitlines()
        assert stream_lines == batch_lines


class TestErrorHandling:
    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["infer", "--bogus-flag", "x"])
        assert exc.value.code == 2

    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_runtime_failure_prints_category_line(self, model_path, tmp_path, capsys):
        missing = tmp_path / "missing.wav"
        code = main([
            "infer", "--model", str(model_path), "--audio", str(missing),
            "--out", str(tmp_path / "out.csv"),
        ])
        assert code == 1
        err_lines = [l for l in capsys.readouterr().err.splitlines()
                     if l.startswith("ERROR ")]
        assert len(err_lines) == 1
        assert ":" in err_lines[0]

    def test_wrong_rate_wav_reports_audio_format(self, model_path, tmp_path, capsys):
        bad = tmp_path / "bad.wav"
        write_wav(bad, np.zeros(8000, np.int16), sample_rate=8000)
        code = main([
            "infer", "--model", str(model_path), "--audio", str(bad),
            "--out", str(tmp_path / "out.csv"),
        ])
        assert code == 1
        assert "ERROR audio-format:" in capsys.readouterr().err


class TestConfigFile:
    def test_config_file_overrides_defaults_but_not_flags(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"speakers": 1, "clips-per-speaker": 1,
                                   "min-frames": 60, "max-frames": 70}))
        out_dir = tmp_path / "ds"
        assert main([
            "synth-data", "--config", str(cfg), "--out-dir", str(out_dir),
            "--clips-per-speaker", "2",
        ]) == 0
        capsys.readouterr()
        records = load_dataset(out_dir)
        # 1 speaker from the file, 2 clips from the explicit flag
        assert len(records) == 2
        assert all(r.speaker_id == "spk00" for r in records)

    def test_resolved_config_printed(self, tmp_path, capsys):
        out_dir = tmp_path / "ds"
        main(["synth-data", "--out-dir", str(out_dir), "--speakers", "1",
              "--clips-per-speaker", "1", "--min-frames", "60", "--max-frames", "70"])
        err = capsys.readouterr().err
        assert "config speakers=1" in err
        assert "config seed=0" in err
