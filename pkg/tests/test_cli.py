"""End-to-end CLI runs, in-process through main()."""

import json

import numpy as np
import pytest

from speechresp.belt import load_belt_csv, preprocess_trace
from speechresp.cli import main
from speechresp.corpus import emb_path_for, load_manifest
from speechresp.embeddings import save_embeddings
from speechresp.features import FeatureKind, FeatureMatrix
from speechresp.training import checkpoint_metadata, load_checkpoint


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small corpus with embeddings and one trained filterbank model."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    rc = main(
        [
            "synth",
            "--out-dir",
            str(corpus),
            "--n-utterances",
            "3",
            "--utterances-per-speaker",
            "1",
            "--utterance-s",
            "30",
            "--seed",
            "5",
        ]
    )
    assert rc == 0
    manifest = corpus / "manifest.jsonl"
    rng = np.random.default_rng(2)
    for e in load_manifest(manifest):
        belt = load_belt_csv(e.belt_path)
        trace = preprocess_trace(belt, 30.0, frame_rate_hz=50.0)
        data = rng.standard_normal((trace.values.size, 8))
        data[:, 3] = trace.values + 0.05 * rng.standard_normal(trace.values.size)
        save_embeddings(
            FeatureMatrix(data, 50.0, FeatureKind.EMBEDDING),
            emb_path_for(e.audio_path, 4),
            layer=4,
        )
    run = root / "run_mfb"
    rc = main(
        [
            "train",
            "--manifest",
            str(manifest),
            "--out-dir",
            str(run),
            "--features",
            "mfb",
            "--seg-s",
            "10",
            "--max-epochs",
            "2",
            "--batch-size",
            "4",
            "--conv-width",
            "3",
            "--lstm-layers",
            "1",
            "--lstm-units",
            "8",
            "--embed-units",
            "8",
            "--seed",
            "0",
        ]
    )
    assert rc == 0
    return {"root": root, "corpus": corpus, "manifest": manifest, "run": run}


def train_args(workspace, out_dir, *extra):
    return [
        "train",
        "--manifest",
        str(workspace["manifest"]),
        "--out-dir",
        str(out_dir),
        "--seg-s",
        "10",
        "--max-epochs",
        "2",
        "--batch-size",
        "4",
        "--conv-width",
        "3",
        "--lstm-layers",
        "1",
        "--lstm-units",
        "8",
        "--embed-units",
        "8",
        "--seed",
        "0",
        *extra,
    ]


class TestSynth:
    def test_prints_manifest_path(self, tmp_path, capsys):
        rc = main(
            [
                "synth",
                "--out-dir",
                str(tmp_path / "c"),
                "--n-utterances",
                "3",
                "--utterances-per-speaker",
                "1",
                "--utterance-s",
                "30",
            ]
        )
        assert rc == 0
        out = capsys.readouterr().out.strip()
        assert out.endswith("manifest.jsonl")
        assert len(load_manifest(out)) == 3

    def test_three_way_split_present(self, workspace):
        splits = {e.split for e in load_manifest(workspace["manifest"])}
        assert splits == {"train", "val", "test"}


class TestTrain:
    def test_artifacts_and_summary(self, workspace, capsys):
        run = workspace["run"]
        assert (run / "model.ckpt").exists()
        lines = (run / "history.jsonl").read_text().strip().split("\n")
        assert len(lines) == 2
        assert {"epoch", "train_loss", "val_loss", "seconds"} == set(json.loads(lines[0]))

    def test_checkpoint_records_pipeline(self, workspace):
        meta = checkpoint_metadata(workspace["run"] / "model.ckpt")
        assert meta["pipeline"]["kind"] == "mfb"
        assert meta["pipeline"]["seg_s"] == 10.0
        assert meta["pipeline"]["frame_rate_hz"] == 100.0
        assert meta["model"]["lstm_units"] == 8
        assert meta["model"]["branches"][0]["input_dims"] == 40

    def test_same_seed_is_byte_identical(self, workspace, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(train_args(workspace, a, "--features", "mfb")) == 0
        assert main(train_args(workspace, b, "--features", "mfb")) == 0
        assert (a / "model.ckpt").read_bytes() == (b / "model.ckpt").read_bytes()

    def test_different_seed_differs(self, workspace, tmp_path):
        a = tmp_path / "a"
        args = train_args(workspace, a, "--features", "mfb")
        args[args.index("--seed") + 1] = "1"
        assert main(args) == 0
        assert (a / "model.ckpt").read_bytes() != (
            workspace["run"] / "model.ckpt"
        ).read_bytes()

    def test_embedding_features_with_selection(self, workspace, tmp_path):
        sel = tmp_path / "sel.json"
        sel.write_text("[3, 1]")
        out = tmp_path / "emb_run"
        rc = main(
            train_args(
                workspace,
                out,
                "--features",
                "emb",
                "--emb-layer",
                "4",
                "--selection",
                str(sel),
            )
        )
        assert rc == 0
        meta = checkpoint_metadata(out / "model.ckpt")
        assert meta["pipeline"]["kind"] == "embedding"
        assert meta["pipeline"]["selection"] == [3, 1]
        assert meta["model"]["branches"][0]["input_dims"] == 2

    def test_fused_features_build_two_branches(self, workspace, tmp_path):
        out = tmp_path / "fused_run"
        rc = main(train_args(workspace, out, "--features", "fused", "--emb-layer", "4"))
        assert rc == 0
        meta = checkpoint_metadata(out / "model.ckpt")
        branches = meta["model"]["branches"]
        assert [b["input_dims"] for b in branches] == [40, 8]

    def test_augment_expands_training_set(self, workspace, tmp_path, capsys):
        out = tmp_path / "aug_run"
        rc = main(train_args(workspace, out, "--features", "mfb", "--augment"))
        assert rc == 0
        capsys.readouterr()
        # speed copies exist only as training data; the checkpoint stays mfb
        assert checkpoint_metadata(out / "model.ckpt")["pipeline"]["kind"] == "mfb"

    def test_config_file_between_flags_and_defaults(self, workspace, tmp_path):
        cfg = tmp_path / "run.toml"
        cfg.write_text(
            'features = "mfb"\nlstm_units = 6\nmax_epochs = 3\nconv_width = 3\n'
            'lstm_layers = 1\nembed_units = 8\nbatch_size = 4\nseg_s = 10.0\nseed = 0\n'
        )
        out = tmp_path / "cfg_run"
        rc = main(
            [
                "train",
                "--manifest",
                str(workspace["manifest"]),
                "--out-dir",
                str(out),
                "--config",
                str(cfg),
                "--max-epochs",
                "1",
            ]
        )
        assert rc == 0
        # flag beats file: 1 epoch, file beats default: 6 lstm units
        lines = (out / "history.jsonl").read_text().strip().split("\n")
        assert len(lines) == 1
        assert checkpoint_metadata(out / "model.ckpt")["model"]["lstm_units"] == 6

    def test_summary_json_on_stdout(self, workspace, tmp_path, capsys):
        out = tmp_path / "sum_run"
        assert main(train_args(workspace, out, "--features", "mfb")) == 0
        summary = json.loads(capsys.readouterr().out.strip().split("\n")[-1])
        assert summary["epochs"] == 2
        assert 1 <= summary["best_epoch"] <= 2
        assert "best_val_loss" in summary and "checkpoint" in summary


class TestEval:
    def test_writes_metrics_and_segment_csv(self, workspace, tmp_path, capsys):
        out = tmp_path / "eval"
        rc = main(
            [
                "eval",
                "--checkpoint",
                str(workspace["run"] / "model.ckpt"),
                "--manifest",
                str(workspace["manifest"]),
                "--split",
                "test",
                "--out-dir",
                str(out),
            ]
        )
        assert rc == 0
        printed = json.loads(capsys.readouterr().out.strip().split("\n")[-1])
        on_disk = json.loads((out / "metrics.json").read_text())
        assert printed == on_disk
        assert set(on_disk) == {"ccc", "rmse", "mae_bpm", "acc_at_2bpm_pct", "ber", "n_segments"}
        assert on_disk["n_segments"] == 2
        csv_lines = (out / "segments.csv").read_text().strip().split("\n")
        assert len(csv_lines) == 3

    def test_repeat_runs_are_identical(self, workspace, tmp_path):
        args = lambda d: [
            "eval",
            "--checkpoint",
            str(workspace["run"] / "model.ckpt"),
            "--manifest",
            str(workspace["manifest"]),
            "--out-dir",
            str(d),
        ]
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(args(a)) == 0
        assert main(args(b)) == 0
        assert (a / "metrics.json").read_bytes() == (b / "metrics.json").read_bytes()
        assert (a / "segments.csv").read_bytes() == (b / "segments.csv").read_bytes()


class TestSaliency:
    def test_report_and_selections(self, workspace, tmp_path, capsys):
        out = tmp_path / "sal"
        rc = main(
            [
                "saliency",
                "--manifest",
                str(workspace["manifest"]),
                "--emb-layer",
                "4",
                "--fractions",
                "0.5,0.25",
                "--out-dir",
                str(out),
            ]
        )
        assert rc == 0
        report = json.loads((out / "saliency.json").read_text())
        assert report["dims"] == 8
        half = json.loads((out / "selection_p0.5.json").read_text())
        quarter = json.loads((out / "selection_p0.25.json").read_text())
        assert len(half) == 4 and len(quarter) == 2
        assert set(quarter) <= set(half)
        assert 3 in quarter  # the planted column must survive hard pruning


class TestPredict:
    def test_trace_and_events_artifacts(self, workspace, tmp_path, capsys):
        wav = workspace["corpus"] / "u0000.wav"
        out = tmp_path / "pred"
        rc = main(
            [
                "predict",
                "--checkpoint",
                str(workspace["run"] / "model.ckpt"),
                "--wav",
                str(wav),
                "--out-dir",
                str(out),
            ]
        )
        assert rc == 0
        printed = json.loads(capsys.readouterr().out.strip().split("\n")[-1])
        events = json.loads((out / "u0000.events.json").read_text())
        assert printed == events
        assert events["rr_bpm"] >= 0.0
        # trace covers 2998 frames at 100 Hz, so rr = count * 60 / 29.98
        assert events["rr_bpm"] == pytest.approx(
            len(events["inhale_times_s"]) * 60.0 / 29.98
        )
        trace_lines = (out / "u0000.trace.csv").read_text().strip().split("\n")
        assert trace_lines[0] == "frame,estimate"
        assert len(trace_lines) == 2998 + 1

    def test_missing_embeddings_fail_with_path(self, workspace, tmp_path, capsys):
        sel = tmp_path / "sel.json"
        sel.write_text("[3, 1]")
        out = tmp_path / "emb_run"
        assert (
            main(
                train_args(
                    workspace, out, "--features", "emb", "--emb-layer", "4",
                    "--selection", str(sel),
                )
            )
            == 0
        )
        bare = tmp_path / "bare.wav"
        bare.write_bytes((workspace["corpus"] / "u0000.wav").read_bytes())
        rc = main(
            [
                "predict",
                "--checkpoint",
                str(out / "model.ckpt"),
                "--wav",
                str(bare),
                "--out-dir",
                str(tmp_path / "pred"),
            ]
        )
        assert rc == 2
        assert "bare.layer4.emb" in capsys.readouterr().err


class TestExitCodes:
    def test_missing_required_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["train"])
        assert exc.value.code == 1

    def test_unknown_command_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1

    def test_bad_flag_value_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--manifest", "m", "--max-epochs", "soon"])
        assert exc.value.code == 1

    def test_missing_checkpoint_is_data_error(self, workspace, capsys):
        rc = main(
            [
                "eval",
                "--checkpoint",
                "/nonexistent/model.ckpt",
                "--manifest",
                str(workspace["manifest"]),
            ]
        )
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_garbage_manifest_is_data_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("definitely not json\n")
        rc = main(["saliency", "--manifest", str(bad)])
        assert rc == 2

    def test_bad_toml_is_data_error(self, workspace, tmp_path, capsys):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("this is = = not toml")
        rc = main(train_args(workspace, tmp_path / "x", "--config", str(cfg)))
        assert rc == 2
