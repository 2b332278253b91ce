"""Sparse-IMU full-body pose estimation with region-split recurrent networks.

Six body-worn IMUs (pelvis, both lower legs, head, both forearms) drive three
region branches (upper limbs, torso, lower limbs). Each branch first regresses
sensor velocities, then joint orientations in the 6D representation.
"""
from .errors import (DegenerateInput, ImuPoseError, IncompleteMapping, NonFiniteGradient, ParseError,
                     ShapeMismatch, TooShort, UnknownJoint, UnknownSkeleton, ValidationError)

__version__ = "0.1.0"
