"""Body-region partition shared by data preparation, the model and evaluation."""
from dataclasses import dataclass

from .synth import SENSOR_ORDER


@dataclass(frozen=True)
class RegionSpec:
    name: str
    sensors: tuple  # sensor names, subset of SENSOR_ORDER
    joints: tuple  # predicted xsens23 joints

    @property
    def sensor_idx(self):
        return tuple(SENSOR_ORDER.index(s) for s in self.sensors)

    @property
    def n_sensors(self):
        return len(self.sensors)

    @property
    def n_joints(self):
        return len(self.joints)

    def feature_idx(self):
        """Columns of the 72-wide input that belong to this region."""
        return [12 * s + k for s in self.sensor_idx for k in range(12)]

    def velocity_idx(self):
        """Columns of the 18-wide velocity vector that belong to this region."""
        return [3 * s + k for s in self.sensor_idx for k in range(3)]

    def pose_idx(self):
        """Columns of the 66-wide 6D pose vector that belong to this region."""
        return [6 * PREDICTED_JOINTS.index(j) + k for j in self.joints for k in range(6)]


# Upper legs sit with the lower-limb branch and spine joints with the torso branch.
REGIONS = (
    RegionSpec("UL_r", ("Root", "LeftArm", "RightArm"), ("LShoulder", "LUpperArm", "RShoulder", "RUpperArm")),
    RegionSpec("T_r", ("Root", "Head"), ("L5", "L3", "T12", "T8", "Neck")),
    RegionSpec("LL_r", ("Root", "LeftLeg", "RightLeg", "Head"), ("LUpperLeg", "RUpperLeg")),
)
REGION_NAMES = tuple(r.name for r in REGIONS)

PREDICTED_JOINTS = tuple(j for r in REGIONS for j in r.joints)

# xsens23 joints that take a sensor orientation directly, keyed by sensor name
IMU_JOINTS = {
    "Root": "Pelvis",
    "LeftLeg": "LLowerLeg",
    "RightLeg": "RLowerLeg",
    "Head": "Head",
    "LeftArm": "LForeArm",
    "RightArm": "RForeArm",
}

# terminal joints that inherit their parent's global rotation
TERMINAL_JOINTS = ("RHand", "LHand", "RFoot", "RToe", "LFoot", "LToe")

SIP_JOINTS = ("LUpperArm", "RUpperArm", "LUpperLeg", "RUpperLeg")
