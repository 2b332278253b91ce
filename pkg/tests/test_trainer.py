import csv

import numpy as np
import pytest

from imupose.data import make_training_chunks, stack_chunks
from imupose.demo import generate_motion
from imupose.errors import NonFiniteGradient, ShapeMismatch, ValidationError
from imupose.model import ModelConfig, train_forward, zero_params
from imupose.nncore import load_checkpoint
from imupose.regions import REGIONS
from imupose.trainer import LOG_COLUMNS, TERM_NAMES, TrainConfig, chunk_metrics, compute_loss, load_model, train

TINY = ModelConfig(hidden=6, glb_hidden=3, init_hidden=5)


@pytest.fixture(scope="module")
def chunks():
    out = []
    for seed in (3, 4, 5):
        out += make_training_chunks(generate_motion(60, rng=seed), window=30)
    return out


def perfect(batch):
    vel = {r.name: batch["gt_vel"][..., r.velocity_idx()].copy() for r in REGIONS}
    pose = {r.name: batch["gt_pose"][..., r.pose_idx()].copy() for r in REGIONS}
    return vel, pose


def test_perfect_predictions_zero_loss(chunks):
    b = stack_chunks(chunks)
    res = compute_loss(*perfect(b), b)
    assert res.total == 0 and all(v == 0 for v in res.terms.values()) and set(res.terms) == set(TERM_NAMES)


def test_single_term_isolation(chunks):
    b = stack_chunks(chunks)
    vel, pose = perfect(b)
    r = np.arange(1.0, 25.0) / 10
    pose["UL_r"] = pose["UL_r"] + r
    res = compute_loss(vel, pose, b)
    assert res.total == pytest.approx(np.linalg.norm(r), abs=1e-12)
    assert [k for k, v in res.terms.items() if v != 0] == ["UL_r.pose"]


def test_loss_matches_flat_recomputation(chunks, rng):
    b = stack_chunks(chunks)
    vel, pose = perfect(b)
    vel = {k: v + rng.standard_normal(v.shape) for k, v in vel.items()}
    pose = {k: v + rng.standard_normal(v.shape) for k, v in pose.items()}
    res = compute_loss(vel, pose, b)
    total = 0.0
    B, T = b["inputs"].shape[:2]
    for r in REGIONS:
        for pred, gt in ((pose[r.name], b["gt_pose"][..., r.pose_idx()]), (vel[r.name], b["gt_vel"][..., r.velocity_idx()])):
            s = 0.0
            for i in range(B):
                for t in range(T):
                    s += np.sqrt(np.sum((pred[i, t] - gt[i, t]) ** 2))
            total += s / (B * T)
    assert res.total == pytest.approx(total, abs=1e-12)
    assert res.total == pytest.approx(sum(res.terms.values()), abs=1e-12)


def test_loss_shape_mismatch(chunks):
    b = stack_chunks(chunks)
    vel, pose = perfect(b)
    pose["T_r"] = pose["T_r"][..., :-1]
    with pytest.raises(ShapeMismatch):
        compute_loss(vel, pose, b)


def test_loss_gradient_directions(chunks):
    b = stack_chunks(chunks[:2])
    vel, pose = perfect(b)
    pose["LL_r"] = pose["LL_r"] + 0.5
    res = compute_loss(vel, pose, b)
    assert np.all(res.dpose["LL_r"] > 0) and np.all(res.dpose["UL_r"] == 0)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(lr0=0)
    cfg = TrainConfig(model={"hidden": 8})
    assert cfg.model.hidden == 8
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def small_config(**kw):
    return TrainConfig(**{"epochs": 4, "batch": 2, "lr0": 1e-2, "window": 30, "seed": 7, "model": TINY} | kw)


def test_training_reduces_loss_and_writes_outputs(tmp_path, chunks):
    res = train(small_config(epochs=6), chunks, chunks[:2], out_dir=tmp_path)
    assert len(res.log) == 6 and res.log[-1]["step"] == 6 * 3
    assert res.log[-1]["loss"] < res.log[0]["loss"]
    rows = list(csv.DictReader(open(tmp_path / "metrics.csv")))
    assert tuple(rows[0]) == LOG_COLUMNS and len(rows) == 6
    assert float(rows[-1]["val_sip_deg"]) > 0
    params, cfg = load_model(tmp_path / "checkpoint")
    assert cfg == TINY and all(np.array_equal(params[k], res.params[k]) for k in params)
    lrs = [r["lr"] for r in res.log]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_deterministic_runs_are_bitwise_equal(chunks):
    a = train(small_config(), chunks)
    b = train(small_config(), chunks)
    assert [r["loss"] for r in a.log] == [r["loss"] for r in b.log]
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    c = train(small_config(seed=8), chunks)
    assert [r["loss"] for r in c.log] != [r["loss"] for r in a.log]


def test_resume_is_bitwise_equal(tmp_path, chunks):
    full = train(small_config(), chunks, chunks[:1])
    part = train(small_config(), chunks, chunks[:1], out_dir=tmp_path, stop_after_epoch=2)
    assert len(part.log) == 2
    _, adam, meta = load_checkpoint(tmp_path / "checkpoint")
    assert meta["epoch"] == 2 and adam.t == 6
    rest = train(small_config(), chunks, chunks[:1], resume_from=tmp_path / "checkpoint")
    assert rest.log == full.log
    assert all(np.array_equal(rest.params[k], full.params[k]) for k in full.params)
    assert all(np.array_equal(rest.adam.m[k], full.adam.m[k]) for k in full.params)


def test_non_finite_loss_aborts(tmp_path, chunks):
    bad = make_training_chunks(generate_motion(60, rng=3), window=30)
    bad[0].inputs[3, 5] = np.nan
    with pytest.raises(NonFiniteGradient, match="last good checkpoint"):
        train(small_config(batch=8), bad, out_dir=tmp_path)


def test_validation_metrics_use_ground_truth_init(chunks):
    # validation decodes every chunk from its own first frame
    b = stack_chunks(chunks[:2])
    sip, ang, pos = chunk_metrics(zero_params(TINY), TINY, b)
    assert sip > 0 and ang > 0 and pos > 0
    _, pose, _ = train_forward(zero_params(TINY), TINY, b)
    assert all(np.all(p == 0) for p in pose.values())


def test_resume_rejects_different_model(tmp_path, chunks):
    train(small_config(epochs=1), chunks, out_dir=tmp_path)
    other = small_config(model=ModelConfig(hidden=7, glb_hidden=3, init_hidden=5))
    with pytest.raises(ValidationError):
        train(other, chunks, resume_from=tmp_path / "checkpoint")
