"""End-to-end CLI workflow on a miniature setup."""

import json
import os

import numpy as np
import pytest

from magphase.cli import main
from magphase.features import load_features
from magphase.synthetic import make_corpus
from magphase.wavio import read_wav, write_wav

CONFIG_TEXT = """
schema_version = 1
seed = 4
scheme = J4
analysis.window_length = 128
analysis.hop_length = 32
analysis.dft_size = 256
model.preset = custom
model.freq_bins = 129
model.latent_dim = 4
model.encoder_plan = td:4,db,td:4
model.decoder_plan = db,tu:4,tu:4
model.phase_merge_plan =
model.temporal_channels = 4
model.fc_hidden = 16
train.segment_frames = 8
train.utterances_per_batch = 2
train.max_epochs = 2
paths.train_manifest = corpus/manifest.tsv
paths.dev_manifest = corpus/manifest.tsv
paths.cache_dir = cache
paths.out_dir = runs
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus_dir = root / "corpus"
    corpus_dir.mkdir()
    lines = []
    for i, audio in enumerate(make_corpus(4, seed=2, duration=0.2)):
        write_wav(corpus_dir / f"utt{i}.wav", audio)
        lines.append(f"utt{i}\tutt{i}.wav")
    (corpus_dir / "manifest.tsv").write_text("\n".join(lines) + "\n")
    config = root / "run.cfg"
    config.write_text(CONFIG_TEXT)
    return root


@pytest.fixture(scope="module")
def config_path(workspace):
    return str(workspace / "run.cfg")


def run(*argv):
    return main(list(argv))


class TestWorkflow:
    def test_01_extract(self, workspace, config_path):
        assert run("extract", "--config", config_path) == 0
        feats = sorted(os.listdir(workspace / "cache"))
        assert "utt0.feat" in feats
        assert "resolved.extract.cfg" in feats

    def test_02_stage2_before_stage1_fails(self, workspace, config_path, capsys):
        assert run("train", "--config", config_path, "--stage", "2") == 2
        err = capsys.readouterr().err
        assert "stage1_best.ckpt" in err and "stage 1" in err

    def test_03_train_stage1(self, workspace, config_path):
        assert run("train", "--config", config_path, "--stage", "1") == 0
        assert (workspace / "runs" / "stage1_best.ckpt").exists()
        assert (workspace / "runs" / "stage1_log.jsonl").exists()
        assert (workspace / "runs" / "resolved.train-stage1.cfg").exists()

    def test_04_train_stage2(self, workspace, config_path):
        assert run("train", "--config", config_path, "--stage", "2", "--scheme", "J4") == 0
        assert (workspace / "runs" / "stage2_best.ckpt").exists()

    def test_05_reconstruct_with_gla(self, workspace, config_path):
        out = workspace / "recon" / "utt0_rec.wav"
        assert run(
            "reconstruct", "--config", config_path,
            "--checkpoint", str(workspace / "runs" / "stage2_best.ckpt"),
            "--input", str(workspace / "corpus" / "utt0.wav"),
            "--output", str(out), "--gla", "3",
        ) == 0
        audio = read_wav(out)
        assert np.all(np.isfinite(audio.samples))
        original = read_wav(workspace / "corpus" / "utt0.wav")
        assert len(audio) == len(original)

    def test_06_gla_command(self, workspace, config_path):
        out = workspace / "gla_out" / "utt0.feat"
        assert run(
            "gla", "--config", config_path,
            "--features", str(workspace / "cache" / "utt0.feat"),
            "--out", str(out), "--iterations", "2", "--init", "random",
            "--wav", str(workspace / "gla_out" / "utt0.wav"),
        ) == 0
        from magphase.dsp import TOY_ANALYSIS

        mag, phase = load_features(out, TOY_ANALYSIS)
        orig_mag, _ = load_features(workspace / "cache" / "utt0.feat", TOY_ANALYSIS)
        np.testing.assert_array_equal(mag, orig_mag)  # magnitude held fixed
        pi32 = np.float32(np.pi)
        assert np.all(phase >= -pi32) and np.all(phase < pi32)

    def test_07_evaluate(self, workspace, config_path, capsys):
        reports = workspace / "reports" / "j4.jsonl"
        assert run(
            "evaluate", "--config", config_path,
            "--checkpoint", str(workspace / "runs" / "stage2_best.ckpt"),
            "--out", str(reports), "--gla", "2", "--model-id", "toy-j4",
        ) == 0
        lines = [json.loads(l) for l in open(reports)]
        assert len(lines) == 4
        for record in lines:
            assert record["model_id"] == "toy-j4"
            assert {"ll_mag", "ll_pha", "ll_grd", "ll_ifr"} <= set(record)
            assert "gla_inconsistency" in record
        agg = json.loads(capsys.readouterr().out)
        assert agg["count"] == 4

    def test_08_evaluate_deterministic(self, workspace, config_path):
        a = workspace / "reports" / "a.jsonl"
        b = workspace / "reports" / "b.jsonl"
        for out in (a, b):
            assert run(
                "evaluate", "--config", config_path,
                "--checkpoint", str(workspace / "runs" / "stage2_best.ckpt"),
                "--out", str(out), "--scheme", "M",
            ) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_09_export_spectrograms(self, workspace, config_path):
        out_dir = workspace / "panels"
        assert run(
            "export-spectrograms", "--config", config_path,
            "--input", str(workspace / "corpus" / "utt1.wav"),
            "--checkpoint", str(workspace / "runs" / "stage2_best.ckpt"),
            "--out-dir", str(out_dir),
        ) == 0
        names = sorted(os.listdir(out_dir))
        assert "utt1_true_logmag.pgm" in names
        assert "utt1_recon_if.csv" in names

    def test_10_ll_table(self, workspace, capsys):
        assert run("ll-table", "--reports", str(workspace / "reports" / "j4.jsonl"),
                   "--out", str(workspace / "reports" / "table.txt")) == 0
        table = capsys.readouterr().out
        assert "LL mag" in table and "toy-j4" in table
        assert "GLA ok" in table  # the non-binding GLA probe column
        assert (workspace / "reports" / "table.txt").exists()

    def test_11_data_error_exit_code(self, workspace, config_path, tmp_path):
        bad_manifest = tmp_path / "bad.tsv"
        bad_manifest.write_text("q\tmissing.wav\n")
        assert run("extract", "--config", config_path, "--manifest", str(bad_manifest)) == 3

    def test_12_config_error_exit_code(self, workspace, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("analysis.dft_size = 256\nmodel.preset = paper\n")
        assert run("extract", "--config", str(bad)) == 2
