import csv

import numpy as np
import pytest

from conftest import haar_rotations, naive_fk
from imupose import nncore as nn
from imupose.demo import gen_demo_corpus
from imupose.errors import ShapeMismatch
from imupose.evaluation import (TABLE_COLUMNS, ang_error, build_report, evaluate_dataset, format_table,
                                per_frame_sip, pos_error, score, sip_error, write_report_csv, write_sip_dump)
from imupose.model import ModelConfig, zero_params
from imupose.rotmath import axis_angle_to_mat, geodesic_angle, rot_x, rot_y
from imupose.skeleton import builtin_skeleton

XSENS = builtin_skeleton("xsens23")
SIP = [XSENS.index(j) for j in ("LUpperArm", "RUpperArm", "LUpperLeg", "RUpperLeg")]


def random_poses(rng, frames=6):
    return haar_rotations(frames * 23, rng).reshape(frames, 23, 3, 3)


def test_perfect_prediction_scores_zero(rng):
    gt = random_poses(rng)
    assert sip_error(gt, gt) == pytest.approx(0.0, abs=1e-6)
    assert ang_error(gt, gt) == pytest.approx(0.0, abs=1e-6)
    assert pos_error(gt, gt) == 0.0


def test_sip_single_joint_offset():
    gt = np.broadcast_to(np.eye(3), (1, 23, 3, 3)).copy()
    pred = gt.copy()
    pred[0, XSENS.index("LUpperArm")] = rot_x(30)
    assert sip_error(pred, gt) == pytest.approx(7.5, abs=1e-9)


def test_ang_constant_offset(rng):
    gt = random_poses(rng, 3)
    axes = rng.standard_normal((3, 23, 3))
    pred = gt @ axis_angle_to_mat(axes, np.full((3, 23), np.radians(10.0)))
    assert ang_error(pred, gt) == pytest.approx(10.0, abs=1e-9)


def test_metrics_match_naive_recomputation(rng):
    gt, pred = random_poses(rng), random_poses(rng)
    sip = np.mean([[geodesic_angle(pred[f, j], gt[f, j]) for j in SIP] for f in range(6)])
    ang = np.mean([[geodesic_angle(pred[f, j], gt[f, j]) for j in range(23)] for f in range(6)])
    assert sip_error(pred, gt) == pytest.approx(sip, abs=1e-9)
    assert ang_error(pred, gt) == pytest.approx(ang, abs=1e-9)
    d = []
    for f in range(6):
        a = naive_fk(XSENS.joints, XSENS.parents, XSENS.offsets, pred[f])
        b = naive_fk(XSENS.joints, XSENS.parents, XSENS.offsets, gt[f])
        d.append(np.linalg.norm(a - b, axis=1).mean() * 100)
    assert pos_error(pred, gt) == pytest.approx(np.mean(d), abs=1e-9)


def test_sip_is_ang_restricted(rng):
    gt, pred = random_poses(rng), random_poses(rng)
    assert sip_error(pred, gt) == ang_error(pred[:, SIP], gt[:, SIP])


def test_pos_translation_invariance(rng):
    gt, pred = random_poses(rng), random_poses(rng)
    base = pos_error(pred, gt)
    shift = np.broadcast_to([1.0, 1.0, 1.0], (6, 3))
    assert pos_error(pred, gt, pred_root=shift) == pytest.approx(base, abs=1e-9)
    assert pos_error(gt, gt, pred_root=rng.standard_normal((6, 3))) == pytest.approx(0.0, abs=1e-9)


def test_metrics_positive_when_different(rng):
    gt = random_poses(rng)
    pred = gt @ rot_y(1.0)
    assert sip_error(pred, gt) > 0 and ang_error(pred, gt) > 0 and pos_error(pred, gt) > 0


def test_shape_mismatch(rng):
    with pytest.raises(ShapeMismatch):
        sip_error(random_poses(rng, 2), random_poses(rng, 3))


def test_report_files_and_table(tmp_path, rng):
    gt = random_poses(rng, 4)
    a = score(gt @ rot_x(5.0), gt)
    b = score(gt, gt)
    rep = build_report([("a", *a), ("b", *b)])
    assert rep.sip_deg == pytest.approx(2.5, abs=1e-9) and rep.sip_frames.shape == (8,)
    assert rep.sequences[0]["sip_deg"] == pytest.approx(5.0)
    write_report_csv(rep, tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["sequence", "frames", "sip_deg", "ang_deg", "pos_cm"]
    assert rows[-1][0] == "ALL" and float(rows[-1][2]) == rep.sip_deg
    write_sip_dump(rep, tmp_path / "s.csv")
    dump = list(csv.reader(open(tmp_path / "s.csv")))
    assert len(dump) == 9 and dump[1][:2] == ["a", "0"] and float(dump[-1][2]) == pytest.approx(0.0, abs=1e-6)
    table = format_table([("Ours", rep)])
    head = table.splitlines()[0]
    assert all(c in head for c in ("SIP Err(°)", "Ang Err(°)", "Pos Err(cm)")) and TABLE_COLUMNS[0] in head
    assert "| Ours | 2.50 (±2.50) |" in table


def test_zero_model_scores_positive(tmp_path):
    manifest = gen_demo_corpus(tmp_path / "d", n_seqs=1, n_frames=120, n_test=1, seed=2)
    cfg = ModelConfig(hidden=4, glb_hidden=2, init_hidden=4)
    nn.save_checkpoint(tmp_path / "ck", zero_params(cfg), None, {"model": cfg.to_dict()})
    rep = evaluate_dataset(tmp_path / "ck", manifest, "test", tmp_path / "r.csv", tmp_path / "s.csv")
    assert rep.sip_deg > 0 and rep.ang_deg > 0 and rep.pos_cm > 0
    assert len(rep.sip_frames) == 120 and (tmp_path / "s.csv").exists()
    assert np.all(per_frame_sip(np.broadcast_to(np.eye(3), (2, 23, 3, 3)), np.broadcast_to(np.eye(3), (2, 23, 3, 3))) == 0)
