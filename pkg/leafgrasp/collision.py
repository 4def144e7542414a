"""Collision primitives and the collision scene of the manipulation workflow.

The arm is covered by capsules (a segment swept by a sphere), obstacles are
oriented boxes. Both distance queries are exact and vectorised over pairs:

* segment to box: in the box frame the squared distance along the segment is a
  convex piecewise quadratic whose pieces change where a coordinate crosses a face
  plane, so its minimum is found among those breakpoints, the segment endpoints
  and the stationary point of every piece;
* segment to segment: the clamped closest-point computation for two segments.
"""

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Optional

import numpy as np
import numpy.typing as npt

from leafgrasp.exceptions import ConfigurationError
from leafgrasp.geometry import Pose, UnitQuat
from leafgrasp.kinematics import ArmModel, link_frames
from leafgrasp.perception import LeafCloud

logger = logging.getLogger(__name__)

LEAF_HALF_THICKNESS: float = 0.002
EPSILON: float = 1e-12


def segment_box_distance(
    starts: npt.ArrayLike,
    ends: npt.ArrayLike,
    centers: npt.ArrayLike,
    rotations: npt.ArrayLike,
    half_extents: npt.ArrayLike,
) -> npt.NDArray[np.float64]:
    """Exact distances between segments and oriented boxes, pair by pair.

    Parameters
    ----------
    starts, ends : array-like of shape (P, 3)
        Segment endpoints.
    centers : array-like of shape (P, 3)
        Box centers.
    rotations : array-like of shape (P, 3, 3)
        Box orientations; columns are the box axes.
    half_extents : array-like of shape (P, 3)
        Box half sizes along their axes.

    Returns
    -------
    ndarray of shape (P,)
        Zero where a segment touches or enters its box.
    """
    rotations = np.asarray(rotations, dtype=np.float64).reshape(-1, 3, 3)
    half = np.asarray(half_extents, dtype=np.float64).reshape(-1, 3)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    starts = np.asarray(starts, dtype=np.float64).reshape(-1, 3)
    ends = np.asarray(ends, dtype=np.float64).reshape(-1, 3)
    p0 = np.einsum("pij,pi->pj", rotations, starts - centers)
    direction = np.einsum("pij,pi->pj", rotations, ends - starts)

    moving = np.abs(direction) > EPSILON
    safe = np.where(moving, direction, 1.0)
    breakpoints = np.concatenate([(half - p0) / safe, (-half - p0) / safe], axis=1)
    breakpoints = np.where(np.concatenate([moving, moving], axis=1), breakpoints, 0.0)
    knots = np.sort(
        np.concatenate([np.zeros((len(p0), 1)), np.ones((len(p0), 1)), np.clip(breakpoints, 0.0, 1.0)], axis=1),
        axis=1,
    )

    lower, upper = knots[:, :-1], knots[:, 1:]
    middle = 0.5 * (lower + upper)
    inside_piece = p0[:, None, :] + middle[..., None] * direction[:, None, :]
    active = np.abs(inside_piece) > half[:, None, :]
    signs = np.sign(inside_piece)
    numerator = np.sum(active * direction[:, None, :] * (signs * half[:, None, :] - p0[:, None, :]), axis=2)
    denominator = np.sum(active * direction[:, None, :] ** 2, axis=2)
    stationary = np.where(denominator > EPSILON, numerator / np.where(denominator > EPSILON, denominator, 1.0), middle)
    stationary = np.clip(stationary, lower, upper)

    candidates = np.concatenate([knots, stationary], axis=1)
    points = p0[:, None, :] + candidates[..., None] * direction[:, None, :]
    excess = np.maximum(np.abs(points) - half[:, None, :], 0.0)
    return np.asarray(np.sqrt(np.min(np.sum(excess**2, axis=2), axis=1)))


def segment_segment_distance(
    starts_a: npt.ArrayLike, ends_a: npt.ArrayLike, starts_b: npt.ArrayLike, ends_b: npt.ArrayLike
) -> npt.NDArray[np.float64]:
    """Exact distances between pairs of segments, degenerate segments included."""
    p1 = np.asarray(starts_a, dtype=np.float64).reshape(-1, 3)
    p2 = np.asarray(starts_b, dtype=np.float64).reshape(-1, 3)
    d1 = np.asarray(ends_a, dtype=np.float64).reshape(-1, 3) - p1
    d2 = np.asarray(ends_b, dtype=np.float64).reshape(-1, 3) - p2
    r = p1 - p2
    a = np.sum(d1 * d1, axis=1)
    e = np.sum(d2 * d2, axis=1)
    f = np.sum(d2 * r, axis=1)
    c = np.sum(d1 * r, axis=1)
    b = np.sum(d1 * d2, axis=1)

    point_a = a <= EPSILON
    point_b = e <= EPSILON
    safe_a = np.where(point_a, 1.0, a)
    safe_e = np.where(point_b, 1.0, e)
    denominator = a * e - b * b
    safe_denominator = np.where(denominator > EPSILON, denominator, 1.0)

    s = np.where(denominator > EPSILON, np.clip((b * f - c * e) / safe_denominator, 0.0, 1.0), 0.0)
    t = (b * s + f) / safe_e
    below = t < 0.0
    above = t > 1.0
    s = np.where(below, np.clip(-c / safe_a, 0.0, 1.0), s)
    s = np.where(above, np.clip((b - c) / safe_a, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)

    # One or both segments reduced to a point.
    s = np.where(point_a, 0.0, np.where(point_b, np.clip(-c / safe_a, 0.0, 1.0), s))
    t = np.where(point_b, 0.0, np.where(point_a, np.clip(f / safe_e, 0.0, 1.0), t))

    closest_a = p1 + s[:, None] * d1
    closest_b = p2 + t[:, None] * d2
    return np.asarray(np.linalg.norm(closest_a - closest_b, axis=1))


@dataclass(frozen=True, eq=False)
class Box:
    """Oriented box obstacle, optionally tagged with the leaf it stands for."""

    pose: Pose
    half_extents: npt.NDArray[np.float64]
    leaf_id: Optional[int] = None

    def __post_init__(self) -> None:
        half = np.array(self.half_extents, dtype=np.float64).reshape(3)
        if not np.all(half > 0.0):
            raise ConfigurationError(f"box half-extents must be positive, got {half.tolist()}")
        half.setflags(write=False)
        object.__setattr__(self, "half_extents", half)

    def contains(self, point: npt.ArrayLike) -> bool:
        """Whether ``point`` lies inside or on the box."""
        local = self.pose.orientation.inverse().rotate(np.asarray(point, dtype=np.float64) - self.pose.position)
        return bool(np.all(np.abs(local) <= self.half_extents))

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON representation."""
        return {"pose": self.pose.to_dict(), "half_extents": self.half_extents.tolist(), "leaf_id": self.leaf_id}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Box":
        """Create a box from its JSON representation."""
        return cls(
            pose=Pose.from_dict(data["pose"]),
            half_extents=np.asarray(data["half_extents"], dtype=np.float64),
            leaf_id=None if data.get("leaf_id") is None else int(data["leaf_id"]),
        )


def leaf_box(cloud: LeafCloud, pose: Pose, min_half_thickness: float = LEAF_HALF_THICKNESS) -> Box:
    """Box aligned with a leaf frame that covers the leaf's cloud.

    ``cloud`` and ``pose`` must share a frame. The half-extent along the normal is
    at least ``min_half_thickness``.
    """
    local = pose.orientation.inverse().rotate(cloud.points - pose.position)
    low, high = local.min(axis=0), local.max(axis=0)
    half = np.maximum((high - low) / 2.0, min_half_thickness)
    center = pose.position + pose.orientation.rotate((high + low) / 2.0)
    return Box(Pose(center, pose.orientation), half, leaf_id=cloud.leaf_id)


@dataclass(frozen=True, eq=False)
class Capsules:
    """Arm capsules at one configuration."""

    starts: npt.NDArray[np.float64]
    ends: npt.NDArray[np.float64]
    radii: npt.NDArray[np.float64]
    links: npt.NDArray[np.int64]


def arm_capsules(arm: ArmModel, q: npt.ArrayLike) -> Capsules:
    """Capsules covering each link: one along its ``d`` offset, one along ``a``.

    Zero-length pieces are dropped; a link with neither offset contributes none.
    """
    frames = link_frames(arm, q)
    starts, ends, radii, links = [], [], [], []
    for index, link in enumerate(arm.links):
        origin = frames[index][:3, 3]
        elbow = origin + link.d * frames[index][:3, 2]
        tip = frames[index + 1][:3, 3]
        for start, end in ((origin, elbow), (elbow, tip)):
            if np.linalg.norm(end - start) > EPSILON:
                starts.append(start)
                ends.append(end)
                radii.append(link.radius)
                links.append(index)
    return Capsules(
        starts=np.array(starts).reshape(-1, 3),
        ends=np.array(ends).reshape(-1, 3),
        radii=np.array(radii, dtype=np.float64),
        links=np.array(links, dtype=np.int64),
    )


def joint_sweep_radii(arm: ArmModel) -> npt.NDArray[np.float64]:
    """Per joint, a bound on the distance from its axis to any capsule axis it moves.

    Turning joint ``i`` by ``dq`` moves no capsule axis point further than
    ``radii[i] * |dq|``, so a straight joint-space move of ``dq`` sweeps every
    point along a curve no longer than ``radii @ |dq|``.
    """
    offsets = np.array([abs(link.a) + abs(link.d) for link in arm.links])
    return np.asarray(np.cumsum(offsets[::-1])[::-1])


def capsule_point_contact(capsules: Capsules, points: npt.ArrayLike) -> bool:
    """Whether any point lies inside any capsule."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0 or len(capsules.radii) == 0:
        return False
    capsule_index, point_index = np.divmod(np.arange(len(capsules.radii) * len(points)), len(points))
    distances = segment_segment_distance(
        capsules.starts[capsule_index],
        capsules.ends[capsule_index],
        points[point_index],
        points[point_index],
    )
    return bool(np.any(distances <= capsules.radii[capsule_index]))


class SelfCollisionMatrix:
    """Capsule pairs checked for self-collision.

    Pairs on the same or adjacent links are never checked, and neither are pairs
    already touching at the home configuration (they touch by construction).
    """

    def __init__(self, arm: ArmModel):
        """Build the matrix from the arm's home configuration."""
        home = arm_capsules(arm, arm.home_configuration)
        first, second = np.triu_indices(len(home.radii), k=1)
        distant = np.abs(home.links[first] - home.links[second]) > 1
        first, second = first[distant], second[distant]
        gap = segment_segment_distance(
            home.starts[first], home.ends[first], home.starts[second], home.ends[second]
        )
        touching = gap <= home.radii[first] + home.radii[second]
        if np.any(touching):
            logger.debug("Disabling %d capsule pairs in contact at home", int(touching.sum()))
        self._first: npt.NDArray[np.int64] = first[~touching]
        self._second: npt.NDArray[np.int64] = second[~touching]

    @property
    def pairs(self) -> list[tuple[int, int]]:
        """Checked capsule index pairs."""
        return [(int(a), int(b)) for a, b in zip(self._first, self._second)]

    def collides(self, capsules: Capsules) -> bool:
        """Whether any checked pair overlaps."""
        if len(self._first) == 0:
            return False
        gap = segment_segment_distance(
            capsules.starts[self._first],
            capsules.ends[self._first],
            capsules.starts[self._second],
            capsules.ends[self._second],
        )
        return bool(np.any(gap <= capsules.radii[self._first] + capsules.radii[self._second]))


@dataclass(frozen=True, eq=False)
class CollisionScene:
    """Obstacles of one batch. Boxes tagged with ``allowed_target`` are ignored."""

    obstacles: tuple[Box, ...] = field(default_factory=tuple)
    allowed_target: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    def with_allowed_target(self, leaf_id: Optional[int]) -> "CollisionScene":
        """Return the same scene exempting the boxes of ``leaf_id``."""
        return replace(self, allowed_target=leaf_id)

    @cached_property
    def _active(self) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        boxes = [box for box in self.obstacles if box.leaf_id is None or box.leaf_id != self.allowed_target]
        return (
            np.array([box.pose.position for box in boxes]).reshape(-1, 3),
            np.array([box.pose.orientation.as_matrix() for box in boxes]).reshape(-1, 3, 3),
            np.array([box.half_extents for box in boxes]).reshape(-1, 3),
        )

    def collides_with(self, capsules: Capsules, clearance: float = 0.0) -> bool:
        """Whether any capsule comes within ``clearance`` of any active obstacle."""
        centers, rotations, half_extents = self._active
        if len(centers) == 0 or len(capsules.radii) == 0:
            return False
        capsule_index, box_index = np.divmod(np.arange(len(capsules.radii) * len(centers)), len(centers))
        distances = segment_box_distance(
            capsules.starts[capsule_index],
            capsules.ends[capsule_index],
            centers[box_index],
            rotations[box_index],
            half_extents[box_index],
        )
        return bool(np.any(distances <= capsules.radii[capsule_index] + clearance))

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON representation."""
        return {"obstacles": [box.to_dict() for box in self.obstacles], "allowed_target": self.allowed_target}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CollisionScene":
        """Create a scene from its JSON representation."""
        return cls(
            obstacles=tuple(Box.from_dict(box) for box in data.get("obstacles", [])),
            allowed_target=None if data.get("allowed_target") is None else int(data["allowed_target"]),
        )


class CollisionChecker:
    """Answers ``collides(q)`` for one arm against one scene.

    Obstacles closer to a capsule than ``clearance`` count as hits; self-collision
    is checked without it.
    """

    def __init__(self, arm: ArmModel, scene: Optional[CollisionScene] = None, clearance: float = 0.0):
        """Initialize the checker and the arm's self-collision matrix."""
        if not clearance >= 0.0:
            raise ConfigurationError(f"clearance must be non-negative, got {clearance}")
        self._arm: ArmModel = arm
        self._scene: CollisionScene = CollisionScene() if scene is None else scene
        self._clearance: float = clearance
        self._self_collision: SelfCollisionMatrix = SelfCollisionMatrix(arm)
        self._checks: int = 0

    @property
    def arm(self) -> ArmModel:
        """Return the checked arm."""
        return self._arm

    @property
    def scene(self) -> CollisionScene:
        """Return the obstacle scene."""
        return self._scene

    @property
    def clearance(self) -> float:
        """Margin added to every capsule radius against obstacles, meters."""
        return self._clearance

    @property
    def checks(self) -> int:
        """Number of states checked so far."""
        return self._checks

    def set_scene(self, scene: CollisionScene) -> "CollisionChecker":
        """Replace the obstacle scene, keeping the self-collision matrix."""
        self._scene = scene
        return self

    def collides(self, q: npt.ArrayLike) -> bool:
        """Whether the arm at ``q`` hits an obstacle or itself."""
        self._checks += 1
        capsules = arm_capsules(self._arm, q)
        return self._scene.collides_with(capsules, self._clearance) or self._self_collision.collides(capsules)


def collides(arm: ArmModel, q: npt.ArrayLike, scene: CollisionScene, clearance: float = 0.0) -> bool:
    """Whether the arm at ``q`` collides with ``scene`` or with itself."""
    return CollisionChecker(arm, scene, clearance).collides(q)


def box_from_corners(low: npt.ArrayLike, high: npt.ArrayLike, leaf_id: Optional[int] = None) -> Box:
    """Axis-aligned box spanning two corners."""
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    return Box(Pose((low + high) / 2.0, UnitQuat.identity()), (high - low) / 2.0, leaf_id)
