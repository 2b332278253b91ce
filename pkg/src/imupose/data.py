"""Sequence files, split manifests, ground-truth velocities and training chunks.

Sequence file (JSON text, ``.json``)::

    {
      "format_version": 1,
      "skeleton": "xsens23",
      "fps": 60.0,
      "joint_order": ["Pelvis", ...],
      "rotations": [[[r00, r01, ..., r22], ...per joint], ...per frame],
      "root_translation": [[x, y, z], ...],          # optional, metres
      "imu": {                                       # optional
        "sensor_order": ["Root", "LeftLeg", "RightLeg", "Head", "LeftArm", "RightArm"],
        "orientations": [[[9 floats] x 6] ...per frame],
        "accelerations": [[[3 floats] x 6] ...per frame]
      }
    }

Rotations are global, row-major. Accelerations are free (gravity removed)
and expressed in the world frame (+Y up).

The binary variant (``.seqb``) stores the same fields: the magic
``IMUSEQB1``, a little-endian uint64 header length, a UTF-8 JSON header
(scalars plus ``arrays: [[name, shape], ...]``), then for each array a
uint64 byte count followed by little-endian float64 data.
"""
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, TooShort, ValidationError
from .regions import PREDICTED_JOINTS
from .rotmath import is_rotation, mat_to_r6, relative_to_root
from .skeleton import PoseSequence, builtin_mapping, builtin_skeleton, forward_kinematics, map_pose
from .synth import SENSOR_JOINTS, SENSOR_ORDER, ImuSequence, normalize_imu, synthesize_imu

FORMAT_VERSION = 1
BINARY_MAGIC = b"IMUSEQB1"
ROTATION_TOL = 1e-6
UP_AXIS = 1


def _to_dict(pose, imu):
    doc = {
        "format_version": FORMAT_VERSION,
        "skeleton": pose.skeleton.name,
        "fps": float(pose.fps),
        "joint_order": list(pose.skeleton.joints),
        "rotations": pose.rotations.reshape(pose.n_frames, -1, 9),
    }
    if pose.root_translation is not None:
        doc["root_translation"] = pose.root_translation
    if imu is not None:
        doc["imu"] = {
            "sensor_order": list(imu.sensor_order),
            "orientations": imu.orientations.reshape(imu.n_frames, -1, 9),
            "accelerations": imu.accelerations,
        }
    return doc


def write_sequence_file(path, pose, imu=None, binary=None):
    path = Path(path)
    if binary is None:
        binary = path.suffix == ".seqb"
    doc = _to_dict(pose, imu)
    if binary:
        _write_binary(path, doc)
    else:
        def plain(o):
            return o.tolist() if isinstance(o, np.ndarray) else o

        doc = {k: ({kk: plain(vv) for kk, vv in v.items()} if isinstance(v, dict) else plain(v))
               for k, v in doc.items()}
        with open(path, "w") as fh:
            json.dump(doc, fh, separators=(",", ":"))


def _write_binary(path, doc):
    arrays = []
    header = {}
    for key, val in doc.items():
        if key == "imu":
            header["imu"] = {"sensor_order": val["sensor_order"]}
            arrays += [("imu.orientations", val["orientations"]), ("imu.accelerations", val["accelerations"])]
        elif isinstance(val, np.ndarray):
            arrays.append((key, val))
        else:
            header[key] = val
    header["arrays"] = [[name, list(a.shape)] for name, a in arrays]
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            data = np.ascontiguousarray(a, dtype="<f8").tobytes()
            fh.write(struct.pack("<Q", len(data)))
            fh.write(data)


def _read_binary(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != BINARY_MAGIC:
        raise ParseError(f"{path}: not a binary sequence file")
    try:
        (hlen,) = struct.unpack_from("<Q", raw, 8)
        header = json.loads(raw[16:16 + hlen].decode())
        pos = 16 + hlen
        doc = {k: v for k, v in header.items() if k != "arrays"}
        for name, shape in header["arrays"]:
            (n,) = struct.unpack_from("<Q", raw, pos)
            pos += 8
            if n != 8 * int(np.prod(shape)) or pos + n > len(raw):
                raise ParseError(f"{path}: array {name!r} has bad length")
            arr = np.frombuffer(raw, dtype="<f8", count=n // 8, offset=pos).reshape(shape).astype(np.float64)
            pos += n
            if name.startswith("imu."):
                doc.setdefault("imu", {})[name[4:]] = arr
            else:
                doc[name] = arr
    except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: corrupt binary sequence file ({exc})") from None
    return doc


def _array(doc, key, path):
    try:
        return np.asarray(doc[key], dtype=np.float64)
    except KeyError:
        raise ParseError(f"{path}: missing field {key!r}") from None
    except (TypeError, ValueError):
        raise ValidationError(f"{path}: field {key!r} is not a rectangular numeric array") from None


def read_sequence_file(path):
    """Load and validate a sequence file -> ``(PoseSequence, ImuSequence | None)``."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(8)
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if head == BINARY_MAGIC:
        doc = _read_binary(path)
    else:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ParseError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    for key in ("format_version", "skeleton", "fps", "joint_order", "rotations"):
        if key not in doc:
            raise ParseError(f"{path}: missing field {key!r}")
    if doc["format_version"] != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported format_version {doc['format_version']!r}")
    spec = builtin_skeleton(doc["skeleton"])
    if list(doc["joint_order"]) != list(spec.joints):
        raise ValidationError(f"{path}: joint_order does not match skeleton {spec.name!r}")
    try:
        fps = float(doc["fps"])
    except (TypeError, ValueError):
        raise ValidationError(f"{path}: fps must be a number") from None
    if not fps > 0:
        raise ValidationError(f"{path}: fps must be positive")

    rot = _array(doc, "rotations", path)
    if rot.ndim != 3 or rot.shape[1:] != (spec.n_joints, 9) or rot.shape[0] < 1:
        raise ValidationError(f"{path}: rotations shape {rot.shape} != (F, {spec.n_joints}, 9)")
    rot = rot.reshape(rot.shape[0], spec.n_joints, 3, 3)
    _check_rotations(rot, path, "rotations")
    trans = None
    if doc.get("root_translation") is not None:
        trans = _array(doc, "root_translation", path)
        if trans.shape != (rot.shape[0], 3):
            raise ValidationError(f"{path}: root_translation shape {trans.shape} != ({rot.shape[0]}, 3)")
    pose = PoseSequence(spec, fps, rot, trans)

    imu = None
    if doc.get("imu") is not None:
        block = doc["imu"]
        if list(block.get("sensor_order", [])) != list(SENSOR_ORDER):
            raise ValidationError(f"{path}: imu.sensor_order must be {list(SENSOR_ORDER)}")
        ori = _array(block, "orientations", path)
        acc = _array(block, "accelerations", path)
        F = rot.shape[0]
        if ori.shape != (F, 6, 9) or acc.shape != (F, 6, 3):
            raise ValidationError(f"{path}: imu arrays {ori.shape}/{acc.shape} != ({F}, 6, 9)/({F}, 6, 3)")
        ori = ori.reshape(F, 6, 3, 3)
        _check_rotations(ori, path, "imu.orientations")
        if not np.all(np.isfinite(acc)):
            raise ValidationError(f"{path}: non-finite imu.accelerations")
        imu = ImuSequence(fps, ori, acc)
    return pose, imu


def _check_rotations(R, path, field):
    if not np.all(np.isfinite(R)):
        raise ValidationError(f"{path}: non-finite values in {field}")
    ok = is_rotation(R, ROTATION_TOL)
    if not np.all(ok):
        bad = np.argwhere(~ok)[0]
        raise ValidationError(f"{path}: {field} block {tuple(int(i) for i in bad)} is not a rotation")


def read_manifest(path):
    """Split manifest: JSON ``{"train": [...], "test": [...]}``, paths relative to the manifest."""
    path = Path(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: manifest must be an object")
    out = {}
    for split in ("train", "test"):
        entries = doc.get(split, [])
        if not isinstance(entries, list):
            raise ParseError(f"{path}: {split!r} must be a list")
        out[split] = [p if os.path.isabs(p) else str(path.parent / p) for p in entries]
    return out


def write_manifest(path, train, test=()):
    path = Path(path)
    base = path.parent.resolve()

    def rel(p):
        p = Path(p).resolve()
        try:
            return str(p.relative_to(base))
        except ValueError:
            return str(p)

    with open(path, "w") as fh:
        json.dump({"train": [rel(p) for p in train], "test": [rel(p) for p in test]}, fh, indent=2)


def to_xsens(pose):
    if pose.skeleton.name == "xsens23":
        return pose
    return map_pose(pose, builtin_mapping(pose.skeleton.name, "xsens23"), builtin_skeleton("xsens23"))


def gt_velocity(pose, sensor_joints=None):
    """Frame-difference velocities (m/s) at the six sensor joints -> (F, 6, 3).

    Non-root entries are root-pinned FK velocities rotated into the current
    root frame. The root entry keeps only the world vertical component of
    the root translation velocity. Frame 0 is zero.
    """
    if pose.n_frames < 2:
        raise TooShort("gt_velocity needs at least 2 frames")
    if sensor_joints is None:
        sensor_joints = SENSOR_JOINTS[pose.skeleton.name]
    idx = pose.skeleton.indices(sensor_joints)
    pos = forward_kinematics(pose.skeleton, pose.rotations)[:, idx]
    vel = np.zeros_like(pos)
    vel[1:] = (pos[1:] - pos[:-1]) * pose.fps
    root_rot = pose.rotations[:, idx[0]]
    vel = np.einsum("fba,fsb->fsa", root_rot, vel)
    trans = pose.translation()
    vel[:, 0] = 0.0
    vel[1:, 0, UP_AXIS] = (trans[1:, UP_AXIS] - trans[:-1, UP_AXIS]) * pose.fps
    return vel


def pose_targets(pose):
    """Root-relative 6D targets for the 11 predicted joints -> (F, 66)."""
    spec = pose.skeleton
    idx = spec.indices(PREDICTED_JOINTS)
    rel = relative_to_root(pose.rotations[:, idx], pose.rotations[:, :1])
    return mat_to_r6(rel).reshape(pose.n_frames, -1)


@dataclass
class TrainingChunk:
    inputs: np.ndarray  # (W, 72)
    gt_pose: np.ndarray  # (W, 66)
    gt_vel: np.ndarray  # (W, 18)
    init_vel: np.ndarray  # (18,)
    init_pose: np.ndarray  # (66,)
    gt_rot: np.ndarray  # (W, 23, 3, 3) global xsens23 rotations, for metrics
    source: str = ""
    start: int = 0

    @property
    def window(self):
        return self.inputs.shape[0]


def make_training_chunks(pose, imu=None, window=300, canonical_yaw=False, source=""):
    """Cut a sequence into consecutive non-overlapping windows; the tail is dropped."""
    pose = to_xsens(pose)
    if pose.n_frames < window:
        raise TooShort(f"{source or 'sequence'}: {pose.n_frames} frames < window {window}")
    if imu is None:
        imu = synthesize_imu(pose)
    if imu.n_frames != pose.n_frames:
        raise ValidationError(f"{source}: IMU has {imu.n_frames} frames, pose has {pose.n_frames}")
    feats = normalize_imu(imu, canonical_yaw)
    targets = pose_targets(pose)
    vel = gt_velocity(pose).reshape(pose.n_frames, -1)
    chunks = []
    for start in range(0, pose.n_frames - window + 1, window):
        sl = slice(start, start + window)
        chunks.append(TrainingChunk(
            inputs=feats[sl].copy(),
            gt_pose=targets[sl].copy(),
            gt_vel=vel[sl].copy(),
            init_vel=vel[start].copy(),
            init_pose=targets[start].copy(),
            gt_rot=pose.rotations[sl].copy(),
            source=source,
            start=start,
        ))
    return chunks


def load_chunks(paths, window=300, canonical_yaw=False):
    chunks = []
    for p in paths:
        pose, imu = read_sequence_file(p)
        chunks.extend(make_training_chunks(pose, imu, window, canonical_yaw, source=str(p)))
    return chunks


def stack_chunks(chunks):
    """Batch-major arrays from a list of chunks."""
    return {
        "inputs": np.stack([c.inputs for c in chunks]),
        "gt_pose": np.stack([c.gt_pose for c in chunks]),
        "gt_vel": np.stack([c.gt_vel for c in chunks]),
        "init_vel": np.stack([c.init_vel for c in chunks]),
        "init_pose": np.stack([c.init_pose for c in chunks]),
        "gt_rot": np.stack([c.gt_rot for c in chunks]),
    }
