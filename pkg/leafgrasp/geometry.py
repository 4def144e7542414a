"""Frames, rigid transforms, quaternions and the pinhole camera model.

Conventions used throughout the package:

* quaternions are stored scalar-first ``(w, x, y, z)`` and canonicalised to ``w >= 0``;
  scipy's ``Rotation`` is scalar-last, so conversions go through
  :meth:`UnitQuat.as_rotation` and :meth:`UnitQuat.from_rotation`;
* the camera frame is the optical one: +x right, +y down, +z forward. "Up" in the
  image is therefore camera -y.
"""

from dataclasses import dataclass
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy.spatial.transform import Rotation

from leafgrasp.exceptions import (
    DegenerateQuaternionError,
    InvalidIntrinsicsError,
    NonFiniteValueError,
    NonOrthonormalBasisError,
    ZeroAxisError,
)

Vec3 = npt.NDArray[np.float64]

ORTHONORMAL_TOLERANCE: float = 1e-6
ZERO_AXIS_TOLERANCE: float = 1e-12


def as_vec3(values: npt.ArrayLike, name: str = "vector") -> Vec3:
    """Return a read-only float64 copy of a 3-vector, rejecting non-finite input."""
    vector = np.array(values, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(vector)):
        raise NonFiniteValueError(name)
    vector.setflags(write=False)
    return vector


def normalize(vector: npt.ArrayLike) -> Vec3:
    """Return the unit vector along ``vector``."""
    array = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(array))
    if norm < ZERO_AXIS_TOLERANCE:
        raise ZeroAxisError(norm)
    return array / norm


@dataclass(frozen=True)
class UnitQuat:
    """Unit quaternion in scalar-first order with canonical sign (``w >= 0``)."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        values = np.array([self.w, self.x, self.y, self.z], dtype=np.float64)
        norm = float(np.linalg.norm(values))
        if not np.isfinite(norm) or norm < ZERO_AXIS_TOLERANCE:
            raise DegenerateQuaternionError(norm)
        values /= norm
        # q and -q encode the same rotation; pick one representative.
        if values[0] < 0.0 or (values[0] == 0.0 and values[np.flatnonzero(values)[0]] < 0.0):
            values = -values
        for name, value in zip("wxyz", values):
            object.__setattr__(self, name, float(value))

    @classmethod
    def identity(cls) -> "UnitQuat":
        """Return the identity rotation."""
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, values: npt.ArrayLike) -> "UnitQuat":
        """Create a quaternion from a ``[w, x, y, z]`` sequence."""
        w, x, y, z = np.asarray(values, dtype=np.float64).reshape(4)
        return cls(float(w), float(x), float(y), float(z))

    @classmethod
    def from_rotation(cls, rotation: Rotation) -> "UnitQuat":
        """Create a quaternion from a scipy ``Rotation``."""
        x, y, z, w = rotation.as_quat()
        return cls(float(w), float(x), float(y), float(z))

    @classmethod
    def from_matrix(cls, matrix: npt.ArrayLike) -> "UnitQuat":
        """Create a quaternion from a 3x3 rotation matrix."""
        return cls.from_rotation(Rotation.from_matrix(np.asarray(matrix, dtype=np.float64)))

    @classmethod
    def from_axis_angle(cls, axis: npt.ArrayLike, angle: float) -> "UnitQuat":
        """Create the rotation of ``angle`` radians about ``axis``."""
        return cls.from_rotation(Rotation.from_rotvec(normalize(axis) * angle))

    def as_array(self) -> npt.NDArray[np.float64]:
        """Return ``[w, x, y, z]``."""
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    def as_rotation(self) -> Rotation:
        """Return the equivalent scipy ``Rotation``."""
        return Rotation.from_quat([self.x, self.y, self.z, self.w])

    def as_matrix(self) -> npt.NDArray[np.float64]:
        """Return the 3x3 rotation matrix."""
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
                [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
                [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
            ]
        )

    def __mul__(self, other: "UnitQuat") -> "UnitQuat":
        """Hamilton product: the rotation ``other`` followed by ``self``."""
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return UnitQuat(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def inverse(self) -> "UnitQuat":
        """Return the inverse rotation."""
        return UnitQuat(self.w, -self.x, -self.y, -self.z)

    def rotate(self, vectors: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Rotate a 3-vector or an ``(N, 3)`` array of vectors."""
        array = np.asarray(vectors, dtype=np.float64)
        return array @ self.as_matrix().T

    def angle_to(self, other: "UnitQuat") -> float:
        """Geodesic angle in radians between two rotations."""
        delta = self.inverse() * other
        return float(2.0 * np.arctan2(np.linalg.norm([delta.x, delta.y, delta.z]), abs(delta.w)))

    def isclose(self, other: "UnitQuat", atol: float = 1e-9) -> bool:
        """Whether two quaternions encode the same rotation, sign-insensitively."""
        a, b = self.as_array(), other.as_array()
        return bool(np.allclose(a, b, atol=atol) or np.allclose(a, -b, atol=atol))


@dataclass(frozen=True, eq=False)
class Transform:
    """Rigid transform applying ``rotation`` then ``translation``."""

    rotation: UnitQuat
    translation: Vec3

    def __post_init__(self) -> None:
        object.__setattr__(self, "translation", as_vec3(self.translation, "translation"))

    @classmethod
    def identity(cls) -> "Transform":
        """Return the identity transform."""
        return cls(UnitQuat.identity(), np.zeros(3))

    @classmethod
    def from_translation(cls, translation: npt.ArrayLike) -> "Transform":
        """Return a pure translation."""
        return cls(UnitQuat.identity(), np.asarray(translation, dtype=np.float64))

    @classmethod
    def from_matrix(cls, matrix: npt.ArrayLike) -> "Transform":
        """Create a transform from a 4x4 homogeneous matrix."""
        array = np.asarray(matrix, dtype=np.float64)
        return cls(UnitQuat.from_matrix(array[:3, :3]), array[:3, 3])

    def as_matrix(self) -> npt.NDArray[np.float64]:
        """Return the 4x4 homogeneous matrix."""
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation.as_matrix()
        matrix[:3, 3] = self.translation
        return matrix

    def inverse(self) -> "Transform":
        """Return the inverse transform."""
        inverse_rotation = self.rotation.inverse()
        return Transform(inverse_rotation, -inverse_rotation.rotate(self.translation))

    def apply(self, points: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Map a point or an ``(N, 3)`` array of points through the transform."""
        return self.rotation.rotate(points) + self.translation

    def __matmul__(self, other: "Transform") -> "Transform":
        return compose(self, other)

    def isclose(self, other: "Transform", atol: float = 1e-9) -> bool:
        """Whether two transforms agree within ``atol``."""
        return self.rotation.isclose(other.rotation, atol) and bool(
            np.allclose(self.translation, other.translation, atol=atol)
        )

    def to_dict(self) -> dict[str, list[float]]:
        """Return the ``{"p": [...], "q": [...]}`` representation."""
        return {"p": [float(v) for v in self.translation], "q": [float(v) for v in self.rotation.as_array()]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Transform":
        """Create a transform from its ``{"p", "q"}`` representation."""
        return cls(UnitQuat.from_array(data["q"]), np.asarray(data["p"], dtype=np.float64))


@dataclass(frozen=True, eq=False)
class Pose:
    """A 6D pose: position in meters and orientation as a unit quaternion."""

    position: Vec3
    orientation: UnitQuat

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", as_vec3(self.position, "position"))

    @classmethod
    def from_transform(cls, transform: Transform) -> "Pose":
        """Interpret a transform as the pose of the frame it maps from."""
        return cls(transform.translation, transform.rotation)

    def as_transform(self) -> Transform:
        """Return the transform mapping pose-frame coordinates to the parent frame."""
        return Transform(self.orientation, self.position)

    @property
    def axes(self) -> npt.NDArray[np.float64]:
        """Rotation matrix whose columns are the pose's x, y and z axes."""
        return self.orientation.as_matrix()

    @property
    def normal(self) -> Vec3:
        """The pose's z axis (the leaf normal for leaf frames)."""
        return self.axes[:, 2]

    def isclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        """Whether two poses agree within ``atol``."""
        return self.as_transform().isclose(other.as_transform(), atol)

    def to_dict(self) -> dict[str, list[float]]:
        """Return the ``{"p": [x, y, z], "q": [w, x, y, z]}`` representation."""
        return self.as_transform().to_dict()

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Pose":
        """Create a pose from its ``{"p", "q"}`` representation."""
        return cls.from_transform(Transform.from_dict(data))


def compose(a: Transform, b: Transform) -> Transform:
    """Return the transform applying ``b`` first, then ``a``."""
    return Transform(a.rotation * b.rotation, a.apply(b.translation))


def inverse(transform: Transform) -> Transform:
    """Return the inverse of ``transform``."""
    return transform.inverse()


def transform_point(transform: Transform, point: npt.ArrayLike) -> Vec3:
    """Return ``R p + t``."""
    return as_vec3(transform.apply(np.asarray(point, dtype=np.float64).reshape(3)), "point")


def quat_from_basis(t: npt.ArrayLike, b: npt.ArrayLike, n: npt.ArrayLike) -> UnitQuat:
    """Return the quaternion whose rotation matrix has columns ``[t b n]``.

    Parameters
    ----------
    t, b, n : array-like of shape (3,)
        Tangent, bitangent and normal of a right-handed orthonormal frame.

    Raises
    ------
    NonOrthonormalBasisError
        If the Gram matrix deviates from identity by more than 1e-6, or if the triad
        is left-handed (it would not be a rotation).
    """
    basis = np.column_stack([np.asarray(v, dtype=np.float64).reshape(3) for v in (t, b, n)])
    deviation = float(np.max(np.abs(basis.T @ basis - np.eye(3))))
    if deviation > ORTHONORMAL_TOLERANCE or np.linalg.det(basis) < 0.0:
        raise NonOrthonormalBasisError(deviation, ORTHONORMAL_TOLERANCE)
    return UnitQuat.from_matrix(basis)


def rotate_about_axis(q: UnitQuat, axis: npt.ArrayLike, angle: float) -> UnitQuat:
    """Compose ``q`` with an intrinsic rotation of ``angle`` about ``axis``.

    The axis is expressed in the frame rotated by ``q``: rotating a leaf frame about its
    own normal uses ``axis = (0, 0, 1)``.
    """
    array = np.asarray(axis, dtype=np.float64).reshape(3)
    norm = float(np.linalg.norm(array))
    if norm < ZERO_AXIS_TOLERANCE:
        raise ZeroAxisError(norm)
    return q * UnitQuat.from_axis_angle(array / norm, angle)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise InvalidIntrinsicsError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise InvalidIntrinsicsError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0.0 <= self.cx < self.width and 0.0 <= self.cy < self.height):
            raise InvalidIntrinsicsError(f"principal point ({self.cx}, {self.cy}) lies outside the image")

    @classmethod
    def default(cls) -> "CameraIntrinsics":
        """Return 640x480 intrinsics of a typical short-range RGB-D camera."""
        return cls(fx=615.0, fy=615.0, cx=320.0, cy=240.0, width=640, height=480)

    @property
    def shape(self) -> tuple[int, int]:
        """Image shape as ``(height, width)``."""
        return (self.height, self.width)

    def pixel_rays(self) -> npt.NDArray[np.float64]:
        """Return ``(height * width, 3)`` rays with unit depth, in row-major pixel order."""
        v, u = np.indices(self.shape, dtype=np.float64)
        rays = np.empty((self.height * self.width, 3))
        rays[:, 0] = ((u - self.cx) / self.fx).ravel()
        rays[:, 1] = ((v - self.cy) / self.fy).ravel()
        rays[:, 2] = 1.0
        return rays

    def project(self, points: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Project camera-frame points to ``(u, v, depth)`` rows."""
        array = np.atleast_2d(np.asarray(points, dtype=np.float64))
        depth = array[:, 2]
        u = array[:, 0] * self.fx / depth + self.cx
        v = array[:, 1] * self.fy / depth + self.cy
        return np.column_stack([u, v, depth])

    def to_dict(self) -> dict[str, float]:
        """Return the JSON representation."""
        return {
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CameraIntrinsics":
        """Create intrinsics from their JSON representation."""
        return cls(
            fx=float(data["fx"]),
            fy=float(data["fy"]),
            cx=float(data["cx"]),
            cy=float(data["cy"]),
            width=int(data["width"]),
            height=int(data["height"]),
        )
