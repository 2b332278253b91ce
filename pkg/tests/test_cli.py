import io
import json
import sys

import numpy as np
import pytest

from imupose.cli import read_config, run
from imupose.data import read_manifest, read_sequence_file, write_sequence_file
from imupose.skeleton import PoseSequence, builtin_skeleton

TINY_FLAGS = ["--hidden", "6", "--glb", "3", "--init-hidden", "5", "--window", "60", "--batch", "4"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run(["gen-demo", "--out", str(d / "demo"), "--seqs", "2", "--frames", "130", "--test-seqs", "1",
                "--seed", "3"]) == 0
    assert run(["train", "--manifest", str(d / "demo" / "manifest.json"), "--out", str(d / "run"),
                "--epochs", "2", *TINY_FLAGS]) == 0
    return d


def err_json(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_gen_demo_layout(corpus):
    m = read_manifest(corpus / "demo" / "manifest.json")
    assert [p.rsplit("/", 1)[1] for p in m["train"]] == ["train_000.json", "train_001.json"]
    pose, imu = read_sequence_file(m["test"][0])
    assert pose.n_frames == 130 and imu is not None


def test_convert_identity(tmp_path, capsys):
    spec = builtin_skeleton("xsens23")
    write_sequence_file(tmp_path / "id.json", PoseSequence(spec, 60.0, np.broadcast_to(np.eye(3), (2, 23, 3, 3))))
    assert run(["convert", str(tmp_path / "id.json"), str(tmp_path / "s.json"), "--from", "xsens23", "--to", "smpl24"]) == 0
    out, _ = read_sequence_file(tmp_path / "s.json")
    assert out.skeleton.name == "smpl24" and np.array_equal(out.rotations, np.broadcast_to(np.eye(3), (2, 24, 3, 3)))
    assert run(["convert", str(tmp_path / "s.json"), str(tmp_path / "x.json"), "--from", "xsens23", "--to", "smpl24"]) == 2
    assert err_json(capsys)["error"] == "validation_error"


def test_synth_adds_imu(tmp_path, corpus):
    m = read_manifest(corpus / "demo" / "manifest.json")
    pose, _ = read_sequence_file(m["train"][0])
    write_sequence_file(tmp_path / "p.json", pose)
    assert run(["synth", str(tmp_path / "p.json"), str(tmp_path / "q.seqb"), "--features", str(tmp_path / "f.txt")]) == 0
    _, imu = read_sequence_file(tmp_path / "q.seqb")
    assert imu.n_frames == 130
    rows = (tmp_path / "f.txt").read_text().splitlines()
    assert len(rows) == 130 and len(rows[0].split()) == 72


def test_train_outputs(corpus, capsys):
    assert (corpus / "run" / "checkpoint" / "manifest.json").exists()
    assert (corpus / "run" / "metrics.csv").read_text().startswith("epoch,step,lr,loss,UL_r_pose")


def test_deterministic_training_is_reproducible(corpus, tmp_path):
    args = ["train", "--manifest", str(corpus / "demo" / "manifest.json"), "--epochs", "2", "--deterministic",
            "--seed", "7", *TINY_FLAGS]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert (tmp_path / "a" / "checkpoint" / "tensors.bin").read_bytes() == \
        (tmp_path / "b" / "checkpoint" / "tensors.bin").read_bytes()


def test_eval_prints_table(corpus, tmp_path, capsys):
    capsys.readouterr()
    assert run(["eval", "--checkpoint", str(corpus / "run" / "checkpoint"), "--manifest",
                str(corpus / "demo" / "manifest.json"), "--csv", str(tmp_path / "r.csv"),
                "--sip-dump", str(tmp_path / "s.csv"), "--label", "tiny"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "| Method | SIP Err(°) | Ang Err(°) | Pos Err(cm) |" and out[2].startswith("| tiny |")
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 131


def test_stream_matches_offline(corpus, tmp_path, capsys, monkeypatch):
    m = read_manifest(corpus / "demo" / "manifest.json")
    ck = str(corpus / "run" / "checkpoint")
    assert run(["synth", m["test"][0], str(tmp_path / "t.json"), "--features", str(tmp_path / "f.txt")]) == 0
    capsys.readouterr()
    assert run(["infer", str(tmp_path / "t.json"), "--checkpoint", ck]) == 0
    offline = capsys.readouterr().out
    monkeypatch.setattr(sys, "stdin", io.StringIO((tmp_path / "f.txt").read_text()))
    assert run(["infer", "--stream", "--checkpoint", ck]) == 0
    stream = capsys.readouterr().out
    a = np.loadtxt(io.StringIO(offline))
    b = np.loadtxt(io.StringIO(stream))
    assert a.shape == (130, 207)
    np.testing.assert_allclose(b, a, rtol=0, atol=1e-12)
    assert run(["infer", str(tmp_path / "f.txt"), "--checkpoint", ck, "-o", str(tmp_path / "o.txt")]) == 0
    np.testing.assert_allclose(np.loadtxt(tmp_path / "o.txt"), a, rtol=0, atol=1e-12)
    assert run(["infer", str(tmp_path / "t.json"), "--checkpoint", ck, "-o", str(tmp_path / "o.json")]) == 0
    pose, _ = read_sequence_file(tmp_path / "o.json")
    np.testing.assert_allclose(pose.rotations.reshape(130, -1), a, atol=1e-12)


def test_stream_rejects_bad_lines(corpus, capsys, monkeypatch):
    monkeypatch.setattr(sys, "stdin", io.StringIO("1 2 3\n"))
    assert run(["infer", "--stream", "--checkpoint", str(corpus / "run" / "checkpoint")]) == 2
    e = err_json(capsys)
    assert e["error"] == "validation_error" and "72" in e["message"]


def test_bench_reports_latency(capsys):
    assert run(["bench", "--frames", "5", "--warmup", "1", "--hidden", "8", "--glb", "4", "--init-hidden", "8"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["frames"] == 5 and rep["mean_ms"] > 0 and rep["backend"] in ("numba", "numpy")


@pytest.mark.parametrize("argv, category", [
    (["eval", "--checkpoint", "/nonexistent", "--manifest", "/nonexistent.json"], "parse_error"),
    (["synth", "/nonexistent.json", "/tmp/x.json"], "parse_error"),
    (["train", "--manifest", "/nonexistent.json", "--out", "/tmp/x", "--epochs", "0"], "validation_error"),
])
def test_errors_are_machine_readable(argv, category, capsys):
    assert run(argv) == 2
    assert err_json(capsys)["error"] == category


def test_unknown_skeleton_category(tmp_path, capsys):
    (tmp_path / "f.json").write_text(json.dumps({"format_version": 1, "skeleton": "foo", "fps": 60,
                                                 "joint_order": [], "rotations": []}))
    assert run(["synth", str(tmp_path / "f.json"), str(tmp_path / "g.json")]) == 2
    assert err_json(capsys)["error"] == "unknown_skeleton"


def test_config_file(tmp_path, corpus, capsys):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("# tiny run\nepochs = 1\nhidden = 4\nglb=0\ninit-hidden = 3\nwindow = 60\n")
    assert read_config(cfg)["init_hidden"] == 3
    assert run(["train", "--manifest", str(corpus / "demo" / "manifest.json"), "--out", str(tmp_path / "r"),
                "--config", str(cfg), "--hidden", "5"]) == 0
    meta = json.loads((tmp_path / "r" / "checkpoint" / "manifest.json").read_text())["meta"]
    assert meta["model"]["hidden"] == 5 and meta["model"]["glb_hidden"] == 0 and meta["epoch"] == 1
    cfg.write_text("epochs = many\n")
    assert run(["train", "--manifest", "m", "--out", "o", "--config", str(cfg)]) == 2
    assert err_json(capsys)["error"] == "validation_error"


def test_resume_via_cli_matches_uninterrupted(corpus, tmp_path):
    base = ["train", "--manifest", str(corpus / "demo" / "manifest.json"), "--epochs", "3", "--seed", "2",
            "--val", "train", *TINY_FLAGS]
    assert run(base + ["--out", str(tmp_path / "full")]) == 0
    assert run(base + ["--out", str(tmp_path / "part"), "--stop-after", "1"]) == 0
    # hyperparameters come from the checkpoint; data selection from the command line
    assert run(["train", "--manifest", str(corpus / "demo" / "manifest.json"), "--out", str(tmp_path / "part"),
                "--val", "train", "--resume", str(tmp_path / "part" / "checkpoint")]) == 0
    assert (tmp_path / "full" / "metrics.csv").read_bytes() == (tmp_path / "part" / "metrics.csv").read_bytes()
    assert (tmp_path / "full" / "checkpoint" / "tensors.bin").read_bytes() == \
        (tmp_path / "part" / "checkpoint" / "tensors.bin").read_bytes()
