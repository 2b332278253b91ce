"""Skeleton rosters, forward kinematics and cross-skeleton orientation mapping.

Conventions: +Y up, +X toward the subject's left, +Z forward. Rotations are
GLOBAL bone orientations; a joint's offset is its displacement from the
parent joint expressed in the parent bone's frame, so

    p_j = p_parent(j) + R_parent(j) @ offset_j

with the root at the origin unless a root translation is supplied.

Rest-pose tables use the plain-text layout read by :func:`parse_skeleton_table`::

    # name      parent    x      y      z
    Pelvis      -         0      0      0
    L5          Pelvis    0      0.10   0
"""
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import IncompleteMapping, ParseError, ShapeMismatch, TooShort, UnknownJoint, UnknownSkeleton
from .rotmath import is_rotation


@dataclass(frozen=True, eq=False)
class SkeletonSpec:
    name: str
    joints: tuple
    parents: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        joints = tuple(self.joints)
        parents = np.asarray(self.parents, dtype=np.int64)
        offsets = np.asarray(self.offsets, dtype=np.float64)
        if parents.shape != (len(joints),) or offsets.shape != (len(joints), 3):
            raise ShapeMismatch(f"skeleton {self.name!r}: parents/offsets do not match {len(joints)} joints")
        if len(set(joints)) != len(joints):
            raise ParseError(f"skeleton {self.name!r}: duplicate joint names")
        if np.sum(parents < 0) != 1 or parents[0] >= 0:
            raise ParseError(f"skeleton {self.name!r}: joint 0 must be the only root")
        if np.any(parents[1:] >= np.arange(1, len(joints))):
            raise ParseError(f"skeleton {self.name!r}: parents must precede children")
        if not np.all(np.isfinite(offsets)):
            raise ParseError(f"skeleton {self.name!r}: non-finite offset")
        parents.setflags(write=False)
        offsets.setflags(write=False)
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", offsets)

    @property
    def n_joints(self):
        return len(self.joints)

    @property
    def root(self):
        return self.joints[0]

    def index(self, name):
        try:
            return self.joints.index(name)
        except ValueError:
            raise UnknownJoint(f"joint {name!r} not in skeleton {self.name!r}") from None

    def indices(self, names):
        return [self.index(n) for n in names]

    def parent_of(self, name):
        p = self.parents[self.index(name)]
        return None if p < 0 else self.joints[p]

    def to_table(self):
        lines = ["# name parent x y z"]
        for j, name in enumerate(self.joints):
            p = self.parents[j]
            parent = "-" if p < 0 else self.joints[p]
            x, y, z = (repr(float(v)) for v in self.offsets[j])
            lines.append(f"{name} {parent} {x} {y} {z}")
        return "\n".join(lines) + "\n"


def parse_skeleton_table(text, name="custom"):
    joints, parents, offsets = [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ParseError(f"line {lineno}: expected 'name parent x y z', got {raw!r}")
        jname, parent = parts[0], parts[1]
        try:
            off = [float(v) for v in parts[2:]]
        except ValueError:
            raise ParseError(f"line {lineno}: bad offset in {raw!r}") from None
        if parent == "-":
            pidx = -1
        elif parent in joints:
            pidx = joints.index(parent)
        else:
            raise ParseError(f"line {lineno}: parent {parent!r} must be listed before {jname!r}")
        joints.append(jname)
        parents.append(pidx)
        offsets.append(off)
    if not joints:
        raise ParseError("empty skeleton table")
    return SkeletonSpec(name, tuple(joints), np.array(parents), np.array(offsets))


def load_skeleton(path, name=None):
    with open(path) as fh:
        text = fh.read()
    return parse_skeleton_table(text, name or str(path))


_XSENS23_TABLE = """
Pelvis     -          0      0      0
L5         Pelvis     0      0.10   0
L3         L5         0      0.10   0
T12        L3         0      0.10   0
T8         T12        0      0.10   0
Neck       T8         0      0.15   0
Head       Neck       0      0.10   0
RShoulder  T8        -0.03   0.12   0
RUpperArm  RShoulder -0.15   0      0
RForeArm   RUpperArm -0.30   0      0
RHand      RForeArm  -0.25   0      0
LShoulder  T8         0.03   0.12   0
LUpperArm  LShoulder  0.15   0      0
LForeArm   LUpperArm  0.30   0      0
LHand      LForeArm   0.25   0      0
RUpperLeg  Pelvis    -0.09   0      0
RLowerLeg  RUpperLeg  0     -0.45   0
RFoot      RLowerLeg  0     -0.45   0
RToe       RFoot      0     -0.05   0.15
LUpperLeg  Pelvis     0.09   0      0
LLowerLeg  LUpperLeg  0     -0.45   0
LFoot      LLowerLeg  0     -0.45   0
LToe       LFoot      0     -0.05   0.15
"""

# Spine2 spans the Xsens L5 + L3 segments so torso height matches.
_SMPL24_TABLE = """
Pelvis      -          0      0      0
L_Hip       Pelvis     0.09   0      0
R_Hip       Pelvis    -0.09   0      0
Spine1      Pelvis     0      0.10   0
L_Knee      L_Hip      0     -0.45   0
R_Knee      R_Hip      0     -0.45   0
Spine2      Spine1     0      0.20   0
L_Ankle     L_Knee     0     -0.45   0
R_Ankle     R_Knee     0     -0.45   0
Spine3      Spine2     0      0.10   0
L_Foot      L_Ankle    0     -0.05   0.15
R_Foot      R_Ankle    0     -0.05   0.15
Neck        Spine3     0      0.15   0
L_Collar    Spine3     0.03   0.12   0
R_Collar    Spine3    -0.03   0.12   0
Head        Neck       0      0.10   0
L_Shoulder  L_Collar   0.15   0      0
R_Shoulder  R_Collar  -0.15   0      0
L_Elbow     L_Shoulder 0.30   0      0
R_Elbow     R_Shoulder -0.30  0      0
L_Wrist     L_Elbow    0.25   0      0
R_Wrist     R_Elbow   -0.25   0      0
L_Hand      L_Wrist    0.08   0      0
R_Hand      R_Wrist   -0.08   0      0
"""

_BUILTIN = {"xsens23": _XSENS23_TABLE, "smpl24": _SMPL24_TABLE}
_CACHE = {}


def builtin_skeleton(name):
    if name not in _BUILTIN:
        raise UnknownSkeleton(f"unknown skeleton {name!r}; expected one of {sorted(_BUILTIN)}")
    if name not in _CACHE:
        _CACHE[name] = parse_skeleton_table(_BUILTIN[name], name)
    return _CACHE[name]


def resolve_skeleton(spec):
    return spec if isinstance(spec, SkeletonSpec) else builtin_skeleton(spec)


@dataclass
class PoseSequence:
    """Global joint rotations over time, optionally with a root trajectory."""

    skeleton: SkeletonSpec
    fps: float
    rotations: np.ndarray  # (frames, joints, 3, 3)
    root_translation: np.ndarray = None  # (frames, 3) or None

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        if self.rotations.ndim != 4 or self.rotations.shape[1:] != (self.skeleton.n_joints, 3, 3):
            raise ShapeMismatch(
                f"rotations shape {self.rotations.shape} != (F, {self.skeleton.n_joints}, 3, 3)")
        if self.rotations.shape[0] < 1:
            raise TooShort("pose sequence needs at least one frame")
        if not self.fps > 0:
            raise ShapeMismatch(f"fps must be positive, got {self.fps}")
        if self.root_translation is not None:
            self.root_translation = np.asarray(self.root_translation, dtype=np.float64)
            if self.root_translation.shape != (self.n_frames, 3):
                raise ShapeMismatch(f"root_translation shape {self.root_translation.shape} != ({self.n_frames}, 3)")

    @property
    def n_frames(self):
        return self.rotations.shape[0]

    def translation(self):
        if self.root_translation is None:
            return np.zeros((self.n_frames, 3))
        return self.root_translation

    def validate(self, tol=1e-9):
        return bool(np.all(is_rotation(self.rotations, tol)))


def forward_kinematics(spec, rotations):
    """Root-pinned joint positions.

    ``rotations`` may be a single frame (J, 3, 3) or a stack (F, J, 3, 3);
    the result has shape (J, 3) or (F, J, 3) accordingly.
    """
    R = np.asarray(rotations, dtype=np.float64)
    single = R.ndim == 3
    if single:
        R = R[None]
    if R.ndim != 4 or R.shape[1:] != (spec.n_joints, 3, 3):
        raise ShapeMismatch(f"expected (F, {spec.n_joints}, 3, 3) rotations for {spec.name!r}, got {np.shape(rotations)}")
    pos = _kernels.fk_positions(np.ascontiguousarray(R), np.asarray(spec.parents), np.asarray(spec.offsets))
    return pos[0] if single else pos


def sequence_positions(seq, with_translation=True):
    pos = forward_kinematics(seq.skeleton, seq.rotations)
    if with_translation and seq.root_translation is not None:
        pos = pos + seq.root_translation[:, None, :]
    return pos


@dataclass
class JointMapping:
    """Source->destination orientation transfer.

    ``pairs`` copy one source joint to one destination joint. ``duplicated``
    entries reuse a source joint that already appears in ``pairs``.
    ``inherit`` destination joints take their destination parent's rotation.
    ``dropped`` records source joints deliberately left unused.
    """

    pairs: list
    dropped: list = field(default_factory=list)
    duplicated: list = field(default_factory=list)
    inherit: list = field(default_factory=list)

    def assignments(self):
        return list(self.pairs) + list(self.duplicated)

    def check(self, src_spec, dst_spec):
        covered = [d for _, d in self.assignments()] + list(self.inherit)
        missing = [j for j in dst_spec.joints if j not in covered]
        extra = [j for j in covered if j not in dst_spec.joints]
        dupes = sorted({j for j in covered if covered.count(j) > 1})
        if missing or extra or dupes:
            raise IncompleteMapping(
                f"mapping to {dst_spec.name!r}: missing={missing} unknown={extra} covered-twice={dupes}")
        for s, _ in self.assignments():
            src_spec.index(s)
        for d in self.inherit:
            if dst_spec.parents[dst_spec.index(d)] < 0:
                raise IncompleteMapping(f"root joint {d!r} cannot inherit a parent rotation")


_LIMB_PAIRS = [
    ("Pelvis", "Pelvis"), ("Neck", "Neck"), ("Head", "Head"),
    ("LShoulder", "L_Collar"), ("RShoulder", "R_Collar"),
    ("LUpperArm", "L_Shoulder"), ("RUpperArm", "R_Shoulder"),
    ("LForeArm", "L_Elbow"), ("RForeArm", "R_Elbow"),
    ("LHand", "L_Wrist"), ("RHand", "R_Wrist"),
    ("LUpperLeg", "L_Hip"), ("RUpperLeg", "R_Hip"),
    ("LLowerLeg", "L_Knee"), ("RLowerLeg", "R_Knee"),
    ("LFoot", "L_Ankle"), ("RFoot", "R_Ankle"),
    ("LToe", "L_Foot"), ("RToe", "R_Foot"),
]


def builtin_mapping(src, dst):
    """Fixed Xsens-23 <-> SMPL-24 orientation mappings."""
    if (src, dst) == ("xsens23", "smpl24"):
        return JointMapping(
            pairs=_LIMB_PAIRS + [("L5", "Spine1"), ("T12", "Spine2"), ("T8", "Spine3")],
            dropped=["L3"],
            duplicated=[("LHand", "L_Hand"), ("RHand", "R_Hand")],
        )
    if (src, dst) == ("smpl24", "xsens23"):
        return JointMapping(
            pairs=[(d, s) for s, d in _LIMB_PAIRS] + [("Spine1", "L5"), ("Spine2", "T12"), ("Spine3", "T8")],
            dropped=["L_Hand", "R_Hand"],
            duplicated=[("Spine1", "L3")],
        )
    if src == dst and src in _BUILTIN:
        spec = builtin_skeleton(src)
        return JointMapping(pairs=[(j, j) for j in spec.joints])
    raise UnknownSkeleton(f"no built-in mapping from {src!r} to {dst!r}")


def map_pose(src, mapping, dst_spec):
    """Copy global orientations across skeletons; no retargeting of positions."""
    dst_spec = resolve_skeleton(dst_spec)
    mapping.check(src.skeleton, dst_spec)
    out = np.empty((src.n_frames, dst_spec.n_joints, 3, 3))
    for s, d in mapping.assignments():
        out[:, dst_spec.index(d)] = src.rotations[:, src.skeleton.index(s)]
    # parents precede children, so inherited parents are already filled
    for j, name in enumerate(dst_spec.joints):
        if name in mapping.inherit:
            out[:, j] = out[:, dst_spec.parents[j]]
    return PoseSequence(dst_spec, src.fps, out, src.root_translation)


def end_effector_speed(seq, joint):
    """Per-frame speed (m/s) of one joint under root-pinned FK; frame 0 is 0."""
    j = seq.skeleton.index(joint)
    if seq.n_frames < 2:
        raise TooShort("end_effector_speed needs at least 2 frames")
    p = forward_kinematics(seq.skeleton, seq.rotations)[:, j]
    speed = np.zeros(seq.n_frames)
    speed[1:] = np.linalg.norm(np.diff(p, axis=0), axis=-1) * seq.fps
    return speed


XSENS_END_EFFECTORS = ("LHand", "RHand", "LFoot", "RFoot")
SMPL_END_EFFECTORS = ("L_Wrist", "R_Wrist", "L_Ankle", "R_Ankle")
