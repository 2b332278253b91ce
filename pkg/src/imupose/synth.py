"""Virtual IMU synthesis and the 72-feature input normalization."""
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, TooShort
from .rotmath import remove_yaw
from .skeleton import sequence_positions

SENSOR_ORDER = ("Root", "LeftLeg", "RightLeg", "Head", "LeftArm", "RightArm")
N_SENSORS = len(SENSOR_ORDER)
N_FEATURES = 12 * N_SENSORS

SENSOR_JOINTS = {
    "xsens23": ("Pelvis", "LLowerLeg", "RLowerLeg", "Head", "LForeArm", "RForeArm"),
    "smpl24": ("Pelvis", "L_Knee", "R_Knee", "Head", "L_Elbow", "R_Elbow"),
}

DEFAULT_RADIUS = 4


@dataclass
class ImuSequence:
    fps: float
    orientations: np.ndarray  # (F, 6, 3, 3) global
    accelerations: np.ndarray  # (F, 6, 3) free acceleration, world frame
    sensor_order: tuple = SENSOR_ORDER

    def __post_init__(self):
        self.orientations = np.asarray(self.orientations, dtype=np.float64)
        self.accelerations = np.asarray(self.accelerations, dtype=np.float64)
        self.sensor_order = tuple(self.sensor_order)
        if self.sensor_order != SENSOR_ORDER:
            raise ShapeMismatch(f"sensor order must be {SENSOR_ORDER}, got {self.sensor_order}")
        F = self.orientations.shape[0]
        if self.orientations.shape != (F, N_SENSORS, 3, 3) or self.accelerations.shape != (F, N_SENSORS, 3):
            raise ShapeMismatch(
                f"IMU arrays {self.orientations.shape} / {self.accelerations.shape} inconsistent")

    @property
    def n_frames(self):
        return self.orientations.shape[0]


def second_difference(p, fps, radius=DEFAULT_RADIUS):
    """``(p[t-k] - 2 p[t] + p[t+k]) / (k/fps)^2`` along axis 0, edges held."""
    F = p.shape[0]
    if F < 2 * radius + 1:
        raise TooShort(f"need at least {2 * radius + 1} frames for radius {radius}, got {F}")
    k = radius
    out = np.empty_like(p)
    out[k:F - k] = (p[:F - 2 * k] - 2.0 * p[k:F - k] + p[2 * k:]) * (fps / k) ** 2
    out[:k] = out[k]
    out[F - k:] = out[F - k - 1]
    return out


def synthesize_imu(pose, sensor_joints=None, radius=DEFAULT_RADIUS):
    """Virtual IMUs: bone orientation copied as-is, acceleration by a wide
    second difference of the sensor joint's world position."""
    if sensor_joints is None:
        sensor_joints = SENSOR_JOINTS[pose.skeleton.name]
    idx = pose.skeleton.indices(sensor_joints)
    if pose.n_frames < 2 * radius + 1:
        raise TooShort(f"need at least {2 * radius + 1} frames, got {pose.n_frames}")
    pos = sequence_positions(pose)[:, idx]
    acc = second_difference(pos, pose.fps, radius)
    return ImuSequence(pose.fps, pose.rotations[:, idx], acc)


def normalize_imu_frame(orientations, accelerations, canonical_yaw=False):
    """Map raw IMU readings to the 72-wide model input.

    Per sensor, in order [Root, LeftLeg, RightLeg, Head, LeftArm, RightArm]:
    9 orientation entries (row-major) then 3 acceleration entries. Non-root
    orientations become ``R_root^T R_s`` and accelerations ``R_root^T (a_s - a_root)``;
    the root block keeps ``R_root`` and stores ``R_root^T a_root``.
    Leading batch/time dimensions are preserved.
    """
    ori = np.asarray(orientations, dtype=np.float64)
    acc = np.asarray(accelerations, dtype=np.float64)
    if ori.shape[-3:] != (N_SENSORS, 3, 3) or acc.shape[-2:] != (N_SENSORS, 3) or ori.shape[:-3] != acc.shape[:-2]:
        raise ShapeMismatch(f"bad IMU frame shapes {ori.shape} / {acc.shape}")
    root = ori[..., 0, :, :]
    root_t = np.swapaxes(root, -1, -2)
    rel_ori = root_t[..., None, :, :] @ ori
    rel_acc = acc - acc[..., :1, :]
    rel_acc[..., 0, :] = acc[..., 0, :]
    rel_acc = np.einsum("...ab,...sb->...sa", root_t, rel_acc)
    rel_ori[..., 0, :, :] = remove_yaw(root) if canonical_yaw else root
    feats = np.concatenate([rel_ori.reshape(ori.shape[:-3] + (N_SENSORS, 9)), rel_acc], axis=-1)
    return feats.reshape(ori.shape[:-3] + (N_FEATURES,))


def normalize_imu(imu, canonical_yaw=False):
    """Normalize every frame of an :class:`ImuSequence` -> (F, 72)."""
    return normalize_imu_frame(imu.orientations, imu.accelerations, canonical_yaw)


def features_to_orientations(features):
    """Recover global sensor orientations (..., 6, 3, 3) from normalized features."""
    f = np.asarray(features, dtype=np.float64)
    blocks = f.reshape(f.shape[:-1] + (N_SENSORS, 12))[..., :9].reshape(f.shape[:-1] + (N_SENSORS, 3, 3))
    root = blocks[..., 0, :, :]
    out = root[..., None, :, :] @ blocks
    out[..., 0, :, :] = root
    return out
