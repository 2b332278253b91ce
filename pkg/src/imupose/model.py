"""Part-based two-stage pose network.

A one-layer LSTM extracts a global context ``z`` from all 72 input
features. Each body region then runs

    velocity branch:  v = VRN([x_region, z])              (2-layer LSTM + linear)
    pose branch:      p = PRN([v, x_region, z])           (2-layer LSTM + linear)

where both recurrent branches start from hidden/cell states produced by
small MLPs: the velocity branch from the region's initial velocities, the
pose branch from the region's initial 6D joint targets.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nncore as nn
from .errors import ShapeMismatch
from .regions import IMU_JOINTS, PREDICTED_JOINTS, REGIONS, TERMINAL_JOINTS
from .rotmath import mat_to_r6, r6_to_mat
from .skeleton import builtin_skeleton
from .synth import N_FEATURES, N_SENSORS, SENSOR_ORDER, features_to_orientations

N_VEL = 3 * N_SENSORS
N_POSE = 6 * len(PREDICTED_JOINTS)


@dataclass
class ModelConfig:
    hidden: int = 256
    glb_hidden: int = 64
    init_hidden: int = 256
    n_layers: int = 2
    detach_glb: bool = False
    canonical_yaw: bool = False

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def init_params(cfg, seed=0):
    rng = np.random.default_rng(seed)
    params = {}
    g = cfg.glb_hidden
    if g > 0:
        nn.init_lstm(params, "glb", N_FEATURES, g, 1, rng)
    H, L = cfg.hidden, cfg.n_layers
    for r in REGIONS:
        S, J = r.n_sensors, r.n_joints
        nn.init_mlp(params, f"{r.name}.vrn_init", 3 * S, cfg.init_hidden, 2 * L * H, rng)
        nn.init_lstm(params, f"{r.name}.vrn", 12 * S + g, H, L, rng)
        nn.init_linear(params, f"{r.name}.vrn_out", H, 3 * S, rng)
        nn.init_mlp(params, f"{r.name}.prn_init", 6 * J, cfg.init_hidden, 2 * L * H, rng)
        nn.init_lstm(params, f"{r.name}.prn", 3 * S + 12 * S + g, H, L, rng)
        nn.init_linear(params, f"{r.name}.prn_out", H, 6 * J, rng)
    return params


def zero_params(cfg):
    return {k: np.zeros_like(v) for k, v in init_params(cfg).items()}


@dataclass
class ModelState:
    """Recurrent state of a running model: global extractor plus both branches per region."""

    glb: object = None  # LstmState or None when glb_hidden == 0
    vrn: dict = field(default_factory=dict)
    prn: dict = field(default_factory=dict)

    def copy(self):
        return ModelState(
            None if self.glb is None else self.glb.copy(),
            {k: v.copy() for k, v in self.vrn.items()},
            {k: v.copy() for k, v in self.prn.items()},
        )


def _unpack_state(flat, n_layers, hidden):
    B = flat.shape[0]
    blocks = flat.reshape(B, n_layers, 2, hidden)
    return nn.LstmState([blocks[:, k, 0].copy() for k in range(n_layers)],
                        [blocks[:, k, 1].copy() for k in range(n_layers)])


def _pack_state_grad(dstate, n_layers, hidden):
    B = dstate.h[0].shape[0]
    out = np.empty((B, n_layers, 2, hidden))
    for k in range(n_layers):
        out[:, k, 0] = dstate.h[k]
        out[:, k, 1] = dstate.c[k]
    return out.reshape(B, -1)


def rest_init(batch=1):
    """Zero velocities and the rest-pose 6D targets (identity rotations)."""
    r6 = mat_to_r6(np.eye(3))
    return np.zeros((batch, N_VEL)), np.tile(r6, (batch, len(PREDICTED_JOINTS)))


def _check_init(init_vel, init_pose):
    init_vel = np.atleast_2d(np.asarray(init_vel, dtype=np.float64))
    init_pose = np.atleast_2d(np.asarray(init_pose, dtype=np.float64))
    if init_vel.shape[1] != N_VEL or init_pose.shape[1] != N_POSE or init_vel.shape[0] != init_pose.shape[0]:
        raise ShapeMismatch(f"init shapes {init_vel.shape} / {init_pose.shape}; expected (B, {N_VEL}) / (B, {N_POSE})")
    return init_vel, init_pose


def _init_states(params, cfg, init_vel, init_pose):
    init_vel, init_pose = _check_init(init_vel, init_pose)
    B = init_vel.shape[0]
    state = ModelState()
    caches = {}
    if cfg.glb_hidden > 0:
        state.glb = nn.LstmState.zeros(1, B, cfg.glb_hidden)
    for r in REGIONS:
        vflat, vc = nn.mlp_forward(params, f"{r.name}.vrn_init", init_vel[:, r.velocity_idx()])
        pflat, pc = nn.mlp_forward(params, f"{r.name}.prn_init", init_pose[:, r.pose_idx()])
        state.vrn[r.name] = _unpack_state(vflat, cfg.n_layers, cfg.hidden)
        state.prn[r.name] = _unpack_state(pflat, cfg.n_layers, cfg.hidden)
        caches[r.name] = (vc, pc)
    return state, caches


def init_states(params, cfg, init_vel=None, init_pose=None, batch=1):
    """First-frame recurrent states; rest-pose defaults when ground truth is unknown."""
    if init_vel is None or init_pose is None:
        rv, rp = rest_init(batch)
        init_vel = rv if init_vel is None else init_vel
        init_pose = rp if init_pose is None else init_pose
    return _init_states(params, cfg, init_vel, init_pose)[0]


def _forward(params, cfg, x, state, vel_teacher=None):
    """Time-major core. x: (T, B, 72). Returns (vel, pose, final state, cache)."""
    T, B, d = x.shape
    if d != N_FEATURES:
        raise ShapeMismatch(f"inputs must have {N_FEATURES} features, got {d}")
    final = ModelState()
    if cfg.glb_hidden > 0:
        z, final.glb, glb_cache = nn.lstm_forward(params, "glb", x, state.glb)
    else:
        z, glb_cache = np.zeros((T, B, 0)), None
    vel, pose, caches = {}, {}, {}
    for r in REGIONS:
        xl = x[..., r.feature_idx()]
        vin = np.concatenate([xl, z], axis=-1)
        hv, final.vrn[r.name], vcache = nn.lstm_forward(params, f"{r.name}.vrn", vin, state.vrn[r.name])
        v = nn.linear_forward(params, f"{r.name}.vrn_out", hv)
        feed = v if vel_teacher is None else vel_teacher[..., r.velocity_idx()]
        pin = np.concatenate([feed, xl, z], axis=-1)
        hp, final.prn[r.name], pcache = nn.lstm_forward(params, f"{r.name}.prn", pin, state.prn[r.name])
        p = nn.linear_forward(params, f"{r.name}.prn_out", hp)
        vel[r.name], pose[r.name] = v, p
        caches[r.name] = (hv, vcache, hp, pcache)
    return vel, pose, final, (glb_cache, caches, z.shape, vel_teacher is not None)


def _as_batch(inputs):
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ShapeMismatch(f"inputs must be (T, 72) or (B, T, 72), got {x.shape}")
    return x, False


def forward_sequence(params, cfg, inputs, state=None):
    """Run a whole sequence.

    ``inputs`` is (T, 72) or (B, T, 72); ``state`` defaults to the rest-pose
    initialization. Returns ``(vel, pose, final_state)`` where ``vel`` and
    ``pose`` map region name to arrays shaped like the inputs' batch/time
    layout with widths 3*|sensors| and 6*|joints|.
    """
    x, single = _as_batch(inputs)
    if state is None:
        state = init_states(params, cfg, batch=x.shape[0])
    vel, pose, final, _ = _forward(params, cfg, np.ascontiguousarray(x.transpose(1, 0, 2)), state)

    def out(a):
        a = a.transpose(1, 0, 2)
        return a[0] if single else a

    return {k: out(v) for k, v in vel.items()}, {k: out(v) for k, v in pose.items()}, final


def step_realtime(params, cfg, state, frame):
    """Advance one frame. ``frame`` is (72,) or (B, 72)."""
    f = np.asarray(frame, dtype=np.float64)
    single = f.ndim == 1
    x = f.reshape(1, -1, N_FEATURES) if not single else f.reshape(1, 1, N_FEATURES)
    vel, pose, final, _ = _forward(params, cfg, x, state)
    pick = (lambda a: a[0, 0]) if single else (lambda a: a[0])
    return {k: pick(v) for k, v in vel.items()}, {k: pick(v) for k, v in pose.items()}, final


def train_forward(params, cfg, batch, teacher_forcing=False):
    """Forward pass with caches for :func:`train_backward`. Batch-major dict in, batch-major dict out."""
    x = np.ascontiguousarray(batch["inputs"].transpose(1, 0, 2))
    state, init_caches = _init_states(params, cfg, batch["init_vel"], batch["init_pose"])
    teacher = np.ascontiguousarray(batch["gt_vel"].transpose(1, 0, 2)) if teacher_forcing else None
    vel, pose, _, cache = _forward(params, cfg, x, state, teacher)
    vel = {k: v.transpose(1, 0, 2) for k, v in vel.items()}
    pose = {k: v.transpose(1, 0, 2) for k, v in pose.items()}
    return vel, pose, (x, init_caches, cache)


def train_backward(params, cfg, cache, dvel, dpose):
    """Gradients of a loss given its partials w.r.t. every region's vel/pose (batch-major)."""
    x, init_caches, (glb_cache, caches, z_shape, teacher) = cache
    grads = nn.zeros_like_params(params)
    g = cfg.glb_hidden
    dz = np.zeros(z_shape)
    for r in REGIONS:
        hv, vcache, hp, pcache = caches[r.name]
        S = r.n_sensors
        dp = np.ascontiguousarray(dpose[r.name].transpose(1, 0, 2))
        dv = np.ascontiguousarray(dvel[r.name].transpose(1, 0, 2))
        dhp = nn.linear_backward(params, f"{r.name}.prn_out", hp, dp, grads)
        dpin, dps0 = nn.lstm_backward(params, f"{r.name}.prn", pcache, dhp, grads)
        if not teacher:
            dv = dv + dpin[..., :3 * S]
        dz += dpin[..., 15 * S:]
        dhv = nn.linear_backward(params, f"{r.name}.vrn_out", hv, dv, grads)
        dvin, dvs0 = nn.lstm_backward(params, f"{r.name}.vrn", vcache, dhv, grads)
        dz += dvin[..., 12 * S:]
        vc, pc = init_caches[r.name]
        nn.mlp_backward(params, f"{r.name}.vrn_init", vc, _pack_state_grad(dvs0, cfg.n_layers, cfg.hidden), grads)
        nn.mlp_backward(params, f"{r.name}.prn_init", pc, _pack_state_grad(dps0, cfg.n_layers, cfg.hidden), grads)
    if g > 0 and not cfg.detach_glb:
        nn.lstm_backward(params, "glb", glb_cache, dz, grads)
    return grads


def concat_pose(pose):
    """Region dict -> (..., 66) in PREDICTED_JOINTS order."""
    return np.concatenate([pose[r.name] for r in REGIONS], axis=-1)


def concat_vel(vel):
    """Per-region velocity predictions -> dict sensor -> list of (..., 3) copies."""
    out = {s: [] for s in SENSOR_ORDER}
    for r in REGIONS:
        for k, s in enumerate(r.sensors):
            out[s].append(vel[r.name][..., 3 * k:3 * k + 3])
    return out


_XSENS = builtin_skeleton("xsens23")
_PRED_IDX = _XSENS.indices(PREDICTED_JOINTS)
_IMU_IDX = [(_XSENS.index(IMU_JOINTS[s]), k) for k, s in enumerate(SENSOR_ORDER)]
_TERMINAL_IDX = [(_XSENS.index(j), int(_XSENS.parents[_XSENS.index(j)])) for j in TERMINAL_JOINTS]


def assemble_full_pose(pose6d, imu_orientations, root=None, on_degenerate="raise"):
    """Full xsens23 global pose from predicted 6D targets and sensor orientations.

    pose6d: (..., 66) root-relative predictions; imu_orientations: (..., 6, 3, 3).
    Predicted joints are re-globalized with the root, sensor-bearing joints copy
    their sensor, terminal joints inherit their parent's rotation.
    """
    pose6d = np.asarray(pose6d, dtype=np.float64)
    ori = np.asarray(imu_orientations, dtype=np.float64)
    lead = pose6d.shape[:-1]
    if pose6d.shape[-1] != N_POSE or ori.shape != lead + (N_SENSORS, 3, 3):
        raise ShapeMismatch(f"pose {pose6d.shape} / imu {ori.shape} inconsistent")
    if root is None:
        root = ori[..., 0, :, :]
    rel = r6_to_mat(pose6d.reshape(lead + (len(PREDICTED_JOINTS), 6)), on_degenerate=on_degenerate)
    out = np.empty(lead + (_XSENS.n_joints, 3, 3))
    out[..., _PRED_IDX, :, :] = np.asarray(root)[..., None, :, :] @ rel
    for j, s in _IMU_IDX:
        out[..., j, :, :] = ori[..., s, :, :]
    for j, p in _TERMINAL_IDX:
        out[..., j, :, :] = out[..., p, :, :]
    return out


def assemble_from_features(pose6d, features, on_degenerate="raise"):
    """Like :func:`assemble_full_pose` but recovering sensor orientations from normalized inputs."""
    return assemble_full_pose(pose6d, features_to_orientations(features), on_degenerate=on_degenerate)
