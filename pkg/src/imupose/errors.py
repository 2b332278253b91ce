"""Exception hierarchy. Every error carries a machine-readable ``category``."""


class ImuPoseError(Exception):
    category = "error"


class DegenerateInput(ImuPoseError, ValueError):
    category = "degenerate_input"


class ShapeMismatch(ImuPoseError, ValueError):
    category = "shape_mismatch"


class UnknownSkeleton(ImuPoseError, KeyError):
    category = "unknown_skeleton"

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class UnknownJoint(ImuPoseError, KeyError):
    category = "unknown_joint"

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class IncompleteMapping(ImuPoseError, ValueError):
    category = "incomplete_mapping"


class TooShort(ImuPoseError, ValueError):
    category = "too_short"


class ParseError(ImuPoseError, ValueError):
    category = "parse_error"


class ValidationError(ImuPoseError, ValueError):
    category = "validation_error"


class NonFiniteGradient(ImuPoseError, FloatingPointError):
    category = "non_finite_gradient"
