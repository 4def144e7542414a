"""Submodule providing exceptions for more semantically clear errors."""

from typing import Optional


class LeafGraspError(Exception):
    """Base class for all exceptions in the package."""


class GeometryError(LeafGraspError):
    """Base class for errors raised by frame and rotation helpers."""


class NonOrthonormalBasisError(GeometryError):
    """Raised when a (t, b, n) triad is not a proper orthonormal basis."""

    def __init__(self, deviation: float, tolerance: float):
        super().__init__(
            f"Basis is not orthonormal: Gram matrix deviates from identity by {deviation:.3e} "
            f"(tolerance {tolerance:.1e}), or the triad is left-handed."
        )


class ZeroAxisError(GeometryError):
    """Raised when a rotation axis has (numerically) zero length."""

    def __init__(self, norm: float):
        super().__init__(f"Rotation axis has norm {norm:.3e}; a non-zero axis is required.")


class DegenerateQuaternionError(GeometryError):
    """Raised when a quaternion cannot be normalised."""

    def __init__(self, norm: float):
        super().__init__(f"Quaternion has norm {norm:.3e} and cannot be normalised.")


class NonFiniteValueError(GeometryError):
    """Raised when a vector or depth value is NaN or infinite."""

    def __init__(self, name: str):
        super().__init__(f"'{name}' contains non-finite values.")


class InvalidIntrinsicsError(GeometryError):
    """Raised when camera intrinsics violate their invariants."""

    def __init__(self, reason: str):
        super().__init__(f"Invalid camera intrinsics: {reason}.")


class PerceptionError(LeafGraspError):
    """Base class for per-leaf perception failures."""


class DimensionMismatchError(PerceptionError):
    """Raised when a mask and a depth map do not share dimensions."""

    def __init__(self, expected: tuple[int, ...], found: tuple[int, ...]):
        super().__init__(f"Dimension mismatch: expected (height, width) {expected}, found {found}.")


class EmptyCloudError(PerceptionError):
    """Raised when a masked depth map holds no valid depth value."""

    def __init__(self, leaf_id: Optional[int] = None):
        target = "cloud" if leaf_id is None else f"cloud of leaf {leaf_id}"
        super().__init__(f"The {target} is empty: no masked pixel has a valid depth.")


class DegenerateCloudError(PerceptionError):
    """Raised when a cloud is collinear or too small to define a plane."""

    def __init__(self, number_of_points: int, rank: int):
        super().__init__(
            f"Cannot fit a plane to a cloud of {number_of_points} points with rank {rank}; "
            "at least 3 non-collinear points are required."
        )


class DegenerateTangentError(PerceptionError):
    """Raised when the edge reference point projects to nothing on the leaf plane."""

    def __init__(self, projected_norm: float):
        super().__init__(
            f"Tangent is undefined: the projected edge vector has norm {projected_norm:.3e}."
        )


class SceneError(LeafGraspError):
    """Base class for synthetic scene generation and rendering errors."""


class InvalidParamsError(SceneError):
    """Raised when scene or leaf parameters are out of range."""

    def __init__(self, parameter: str, value: object, expectation: str):
        super().__init__(f"Invalid parameter '{parameter}' = {value!r}: {expectation}.")


class EmptyRenderError(SceneError):
    """Raised when no leaf of a scene projects into the image."""

    def __init__(self, number_of_leaves: int):
        super().__init__(f"None of the {number_of_leaves} leaves projects into the image.")


class KinematicsError(LeafGraspError):
    """Base class for kinematic errors."""


class LengthMismatchError(KinematicsError):
    """Raised when a joint vector does not match the arm's number of joints."""

    def __init__(self, expected: int, found: int):
        super().__init__(f"Joint vector has {found} entries, but the arm has {expected} joints.")


class NoSolutionError(KinematicsError):
    """Raised when inverse kinematics exhausts all restarts."""

    def __init__(self, attempts: int, position_error: float, rotation_error: float):
        super().__init__(
            f"No inverse kinematics solution after {attempts} attempts "
            f"(best position error {position_error:.3e} m, rotation error {rotation_error:.3e} rad)."
        )


class PlanningError(LeafGraspError):
    """Base class for motion planning failures."""


class StartInCollisionError(PlanningError):
    """Raised when the start configuration is in collision."""

    def __init__(self) -> None:
        super().__init__("The start configuration is in collision.")


class GoalInCollisionError(PlanningError):
    """Raised when the goal configuration is in collision."""

    def __init__(self) -> None:
        super().__init__("The goal configuration is in collision.")


class PlanningTimeoutError(PlanningError):
    """Raised when RRT-Connect exhausts its iteration budget."""

    def __init__(self, max_iterations: int):
        super().__init__(f"RRT-Connect did not connect the trees within {max_iterations} iterations.")


class SpectralError(LeafGraspError):
    """Base class for spectral acquisition errors."""


class DegenerateReferenceError(SpectralError):
    """Raised when the white reference does not exceed the dark reference."""

    def __init__(self, wavelength: float):
        super().__init__(f"White reference does not exceed dark reference at {wavelength:.1f} nm.")


class MetricsError(LeafGraspError):
    """Base class for metric computation errors."""


class EmptyInputError(MetricsError):
    """Raised when metrics are requested over no batch at all."""

    def __init__(self) -> None:
        super().__init__("Cannot compute LPB metrics over an empty list of batch runs.")


class ConfigurationError(LeafGraspError):
    """Raised when a run configuration is invalid or references missing files."""

    def __init__(self, reason: str):
        super().__init__(f"Invalid configuration: {reason}.")


class MalformedInputError(LeafGraspError):
    """Raised when an input file does not follow its declared format."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"Malformed input '{path}': {reason}.")


class UnsupportedOutputFormatError(LeafGraspError):
    """Raised when an unsupported output format is provided."""

    def __init__(self, output_format: str, available_output_formats: list[str]):
        super().__init__(
            f"Unsupported output format '{output_format}'. Available output formats are: {available_output_formats}"
        )
