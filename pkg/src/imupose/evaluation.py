"""Pose-error metrics and dataset-level reports.

Poses are global xsens23 rotations shaped (..., 23, 3, 3); SMPL poses are
mapped onto xsens23 before scoring.
"""
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch
from .regions import SIP_JOINTS
from .rotmath import geodesic_angle
from .skeleton import builtin_skeleton, forward_kinematics, resolve_skeleton

_XSENS = builtin_skeleton("xsens23")
SIP_IDX = _XSENS.indices(SIP_JOINTS)
TABLE_COLUMNS = ("SIP Err(°)", "Ang Err(°)", "Pos Err(cm)")


def _check(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape[-2:] != (3, 3):
        raise ShapeMismatch(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    return pred, gt


def per_frame_sip(pred, gt, joints_idx=SIP_IDX):
    pred, gt = _check(pred, gt)
    return geodesic_angle(pred[..., joints_idx, :, :], gt[..., joints_idx, :, :]).mean(axis=-1)


def sip_error(pred, gt):
    """Mean geodesic error (deg) over upper arms and upper legs."""
    return float(np.mean(per_frame_sip(pred, gt)))


def per_frame_ang(pred, gt):
    pred, gt = _check(pred, gt)
    return geodesic_angle(pred, gt).mean(axis=-1)


def ang_error(pred, gt):
    """Mean geodesic error (deg) over all joints."""
    return float(np.mean(per_frame_ang(pred, gt)))


def per_frame_pos(pred, gt, skeleton="xsens23", pred_root=None, gt_root=None):
    pred, gt = _check(pred, gt)
    spec = resolve_skeleton(skeleton)
    lead = pred.shape[:-3]
    pp = forward_kinematics(spec, pred.reshape((-1,) + pred.shape[-3:]))
    pg = forward_kinematics(spec, gt.reshape((-1,) + gt.shape[-3:]))
    if pred_root is not None:
        pp = pp + np.asarray(pred_root).reshape(-1, 1, 3)
    if gt_root is not None:
        pg = pg + np.asarray(gt_root).reshape(-1, 1, 3)
    # align roots per frame
    pp = pp - pp[:, :1]
    pg = pg - pg[:, :1]
    return (np.linalg.norm(pp - pg, axis=-1).mean(axis=-1) * 100.0).reshape(lead)


def pos_error(pred, gt, skeleton="xsens23", pred_root=None, gt_root=None):
    """Mean root-aligned joint distance (cm). Optional per-frame root positions are accepted
    and cancelled by the alignment."""
    return float(np.mean(per_frame_pos(pred, gt, skeleton, pred_root, gt_root)))


@dataclass
class MetricsReport:
    sip_deg: float
    ang_deg: float
    pos_cm: float
    sip_frames: np.ndarray = field(repr=False, default=None)
    ang_frames: np.ndarray = field(repr=False, default=None)
    pos_frames: np.ndarray = field(repr=False, default=None)
    sequences: list = field(default_factory=list)  # dicts: sequence, frames, sip_deg, ang_deg, pos_cm

    @property
    def sip_std(self):
        return float(np.std(self.sip_frames))

    @property
    def ang_std(self):
        return float(np.std(self.ang_frames))

    @property
    def pos_std(self):
        return float(np.std(self.pos_frames))


def score(pred, gt):
    """Per-frame metrics for one sequence of full-body poses (T, 23, 3, 3)."""
    return per_frame_sip(pred, gt), per_frame_ang(pred, gt), per_frame_pos(pred, gt)


def build_report(per_sequence):
    """``per_sequence``: list of (name, sip_frames, ang_frames, pos_frames)."""
    sip = np.concatenate([s for _, s, _, _ in per_sequence])
    ang = np.concatenate([a for _, _, a, _ in per_sequence])
    pos = np.concatenate([p for _, _, _, p in per_sequence])
    rows = [{"sequence": n, "frames": len(s), "sip_deg": float(s.mean()),
             "ang_deg": float(a.mean()), "pos_cm": float(p.mean())} for n, s, a, p in per_sequence]
    return MetricsReport(float(sip.mean()), float(ang.mean()), float(pos.mean()), sip, ang, pos, rows)


def write_report_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sequence", "frames", "sip_deg", "ang_deg", "pos_cm"])
        for row in report.sequences:
            w.writerow([row["sequence"], row["frames"], repr(row["sip_deg"]), repr(row["ang_deg"]), repr(row["pos_cm"])])
        w.writerow(["ALL", len(report.sip_frames), repr(report.sip_deg), repr(report.ang_deg), repr(report.pos_cm)])


def write_sip_dump(report, path):
    """One line per frame: sequence name and SIP error, ready for a box plot."""
    with open(path, "w") as fh:
        fh.write("sequence,frame,sip_deg\n")
        start = 0
        for row in report.sequences:
            for k in range(row["frames"]):
                fh.write(f"{row['sequence']},{k},{float(report.sip_frames[start + k])!r}\n")
            start += row["frames"]


def format_table(rows):
    """Markdown table in the usual column layout. ``rows``: list of (label, MetricsReport)."""
    lines = ["| Method | " + " | ".join(TABLE_COLUMNS) + " |", "|---|---|---|---|"]
    for label, rep in rows:
        lines.append(f"| {label} | {rep.sip_deg:.2f} (±{rep.sip_std:.2f}) | "
                     f"{rep.ang_deg:.2f} (±{rep.ang_std:.2f}) | {rep.pos_cm:.2f} (±{rep.pos_std:.2f}) |")
    return "\n".join(lines)


def run_inference(params, cfg, features, init_vel=None, init_pose=None, on_degenerate="identity"):
    """Offline inference over one normalized sequence (T, 72) -> (T, 23, 3, 3)."""
    from .model import assemble_from_features, concat_pose, forward_sequence, init_states

    state = init_states(params, cfg, init_vel, init_pose)
    _, pose, _ = forward_sequence(params, cfg, features, state)
    return assemble_from_features(concat_pose(pose), features, on_degenerate=on_degenerate)


def evaluate_sequences(params, cfg, sequences):
    """``sequences``: iterable of (name, PoseSequence, ImuSequence | None); rest-pose initialization."""
    from .data import to_xsens
    from .synth import normalize_imu, synthesize_imu

    per_seq = []
    for name, pose, imu in sequences:
        pose = to_xsens(pose)
        if imu is None:
            imu = synthesize_imu(pose)
        feats = normalize_imu(imu, cfg.canonical_yaw)
        pred = run_inference(params, cfg, feats)
        gt = pose.rotations
        if cfg.canonical_yaw:
            # predictions live in the heading-free frame of the root sensor
            from .synth import features_to_orientations

            root_c = features_to_orientations(feats)[:, 0]
            gt = root_c[:, None] @ np.swapaxes(imu.orientations[:, :1], -1, -2) @ gt
        per_seq.append((name, *score(pred, gt)))
    return build_report(per_seq)


def evaluate_dataset(checkpoint, manifest, split="test", csv_path=None, sip_dump_path=None):
    """Evaluate a checkpoint on every sequence of a manifest split."""
    from .data import read_manifest, read_sequence_file
    from .trainer import load_model

    params, cfg = load_model(checkpoint)
    paths = read_manifest(manifest)[split]

    def gen():
        for p in paths:
            pose, imu = read_sequence_file(p)
            yield Path(p).name, pose, imu

    report = evaluate_sequences(params, cfg, gen())
    if csv_path:
        write_report_csv(report, csv_path)
    if sip_dump_path:
        write_sip_dump(report, sip_dump_path)
    return report
