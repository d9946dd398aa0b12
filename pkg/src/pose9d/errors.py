"""Exception hierarchy shared by all pose9d modules."""


class Pose9DError(Exception):
    """Base class for every error raised by the toolkit."""


class DegenerateInput(Pose9DError, ValueError):
    """A 6D rotation whose columns cannot be orthonormalized."""


class NonPositiveDepth(Pose9DError, ValueError):
    pass


class BehindCamera(Pose9DError, ValueError):
    """At least one cuboid corner lies on or behind the image plane."""


class OutOfFrame(Pose9DError, ValueError):
    """A projected cuboid does not overlap the image at all."""


class InfeasibleMatrix(Pose9DError, ValueError):
    pass


class TooLarge(Pose9DError, ValueError):
    pass


class DimensionMismatch(Pose9DError, ValueError):
    pass


class EmptyAssignment(Pose9DError, ValueError):
    pass


class EmptyGroundTruth(Pose9DError, ValueError):
    pass


class GradientSingularity(Pose9DError, RuntimeWarning):
    """Warning category: geodesic gradient requested at theta ~ 0 or pi."""


class ScaleClamped(Pose9DError, RuntimeWarning):
    """Warning category: a non-positive predicted scale was clamped."""


class RecordError(Pose9DError):
    """Problem with an input record; carries the line number and field path."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        self.message = message
        where = []
        if line is not None:
            where.append(f"line {line}")
        if path:
            where.append(path)
        prefix = ": ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class SchemaError(RecordError):
    """Missing field, wrong type, or unparseable text."""


class InvariantError(RecordError):
    """Well-typed value that violates a domain invariant."""
