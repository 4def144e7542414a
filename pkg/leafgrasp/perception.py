"""Perception pipeline: from a depth map and instance masks to ranked leaf poses.

Each mask goes through the same chain:

    mask_depth -> backproject -> filter_outliers -> central_point
               -> estimate_normal -> leaf_frame -> candidate_poses

and the resulting pose sets are sorted by their distance to the camera.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np
import numpy.typing as npt
from scipy import stats

from leafgrasp.exceptions import (
    DegenerateCloudError,
    DegenerateTangentError,
    DimensionMismatchError,
    EmptyCloudError,
    NonFiniteValueError,
    PerceptionError,
)
from leafgrasp.geometry import CameraIntrinsics, Pose, Transform, Vec3, as_vec3, quat_from_basis, rotate_about_axis

logger = logging.getLogger(__name__)

Z_THRESHOLD: float = 2.33
MIN_POINTS_FOR_FILTERING: int = 4
ALPHA_SCHEDULE: tuple[float, ...] = (-np.pi / 4, -np.pi / 2, -3 * np.pi / 4, np.pi)
TANGENT_TOLERANCE: float = 1e-9
EIGEN_TIE_TOLERANCE: float = 1e-12
LEAF_NORMAL_AXIS: tuple[float, float, float] = (0.0, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel depth in meters, ``(height, width)``, with 0 marking missing depth.

    Negative values carry no depth either and are stored as 0.
    """

    values: npt.NDArray[np.float64]

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionMismatchError(expected=(-1, -1), found=tuple(int(s) for s in values.shape))
        if not np.all(np.isfinite(values)):
            raise NonFiniteValueError("depth")
        values = np.maximum(values, 0.0)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        """Number of pixel rows."""
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        """Number of pixel columns."""
        return int(self.values.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        """``(height, width)``."""
        return (self.height, self.width)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Instance mask of one leaf, ``(height, width)`` booleans."""

    bits: npt.NDArray[np.bool_]

    def __post_init__(self) -> None:
        bits = np.array(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise DimensionMismatchError(expected=(-1, -1), found=tuple(int(s) for s in bits.shape))
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def height(self) -> int:
        """Number of pixel rows."""
        return int(self.bits.shape[0])

    @property
    def width(self) -> int:
        """Number of pixel columns."""
        return int(self.bits.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        """``(height, width)``."""
        return (self.height, self.width)


@dataclass(frozen=True, eq=False)
class Observation:
    """An RGB-D frame. The image is carried for provenance and visualisation only."""

    image: npt.NDArray[np.uint8]
    depth: DepthMap
    intrinsics: CameraIntrinsics


@dataclass(frozen=True, eq=False)
class LeafCloud:
    """One leaf's points in the camera frame.

    ``pixel_indices`` keeps the row-major index of the pixel each point came from;
    points are stored in that order, which is what breaks ties deterministically.
    """

    leaf_id: int
    points: npt.NDArray[np.float64]
    pixel_indices: npt.NDArray[np.int64]
    filtered: bool = False

    def __post_init__(self) -> None:
        points = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if len(points) == 0:
            raise EmptyCloudError(self.leaf_id)
        points.setflags(write=False)
        indices = np.array(self.pixel_indices, dtype=np.int64).reshape(-1)
        indices.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "pixel_indices", indices)

    def __len__(self) -> int:
        return len(self.points)

    def transformed(self, transform: Transform) -> "LeafCloud":
        """Return the cloud expressed through ``transform``."""
        return replace(self, points=transform.apply(self.points))

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON representation."""
        return {
            "leaf_id": self.leaf_id,
            "filtered": self.filtered,
            "points": self.points.tolist(),
            "pixel_indices": self.pixel_indices.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LeafCloud":
        """Create a cloud from its JSON representation."""
        return cls(
            leaf_id=int(data["leaf_id"]),
            points=np.asarray(data["points"], dtype=np.float64),
            pixel_indices=np.asarray(data.get("pixel_indices", np.arange(len(data["points"]))), dtype=np.int64),
            filtered=bool(data.get("filtered", False)),
        )


@dataclass(frozen=True, eq=False)
class LeafFrame:
    """Orthonormal leaf frame (t, b, n) at the leaf center."""

    leaf_id: int
    center: Vec3
    tangent: Vec3
    bitangent: Vec3
    normal: Vec3
    reference_point: Vec3

    def as_matrix(self) -> npt.NDArray[np.float64]:
        """Rotation matrix with columns ``[t b n]``."""
        return np.column_stack([self.tangent, self.bitangent, self.normal])


@dataclass(frozen=True, eq=False)
class PoseSet:
    """The five ranked candidate poses of one leaf."""

    leaf_id: int
    poses: tuple[Pose, ...]
    camera_distance: float

    @property
    def center(self) -> Vec3:
        """Shared position of all candidates."""
        return self.poses[0].position

    def transformed(self, transform: Transform) -> "PoseSet":
        """Return the set with every pose mapped through ``transform``.

        The camera distance is kept: it orders targets and is camera-relative.
        """
        return replace(
            self,
            poses=tuple(Pose.from_transform(transform @ pose.as_transform()) for pose in self.poses),
        )

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON representation."""
        return {
            "leaf_id": self.leaf_id,
            "camera_distance": float(self.camera_distance),
            "poses": [pose.to_dict() for pose in self.poses],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PoseSet":
        """Create a pose set from its JSON representation."""
        return cls(
            leaf_id=int(data["leaf_id"]),
            poses=tuple(Pose.from_dict(pose) for pose in data["poses"]),
            camera_distance=float(data["camera_distance"]),
        )


def mask_depth(depth: DepthMap, mask: BinaryMask) -> DepthMap:
    """Return the depth map with every pixel outside ``mask`` set to 0."""
    if depth.shape != mask.shape:
        raise DimensionMismatchError(expected=depth.shape, found=mask.shape)
    return DepthMap(np.where(mask.bits, depth.values, 0.0))


def backproject(masked: DepthMap, intrinsics: CameraIntrinsics, leaf_id: int = 0) -> LeafCloud:
    """Lift every pixel with positive depth to a camera-frame point."""
    if masked.shape != intrinsics.shape:
        raise DimensionMismatchError(expected=intrinsics.shape, found=masked.shape)
    rows, columns = np.nonzero(masked.values > 0.0)
    if len(rows) == 0:
        raise EmptyCloudError(leaf_id)
    depth = masked.values[rows, columns]
    points = np.column_stack(
        [
            (columns - intrinsics.cx) * depth / intrinsics.fx,
            (rows - intrinsics.cy) * depth / intrinsics.fy,
            depth,
        ]
    )
    return LeafCloud(leaf_id=leaf_id, points=points, pixel_indices=rows * masked.width + columns)


def filter_outliers(cloud: LeafCloud, z_th: float = Z_THRESHOLD) -> LeafCloud:
    """Keep the points whose per-axis z-score stays within ``z_th`` on every axis.

    Statistics are the mean and population standard deviation of the input cloud.
    Axes with zero spread are skipped. Clouds of fewer than four points keep all
    their points but are still marked as filtered.
    """
    if len(cloud) < MIN_POINTS_FOR_FILTERING:
        return replace(cloud, filtered=True)

    sigma = np.std(cloud.points, axis=0)
    scale = np.maximum(1.0, np.abs(np.mean(cloud.points, axis=0)))
    active = sigma > 1e-12 * scale
    if not np.all(active):
        logger.debug("Leaf %d: skipping degenerate axes %s", cloud.leaf_id, np.flatnonzero(~active).tolist())

    keep = np.ones(len(cloud), dtype=bool)
    if np.any(active):
        z_scores = stats.zscore(cloud.points[:, active], axis=0, ddof=0)
        keep = np.all(np.abs(z_scores) <= z_th, axis=1)

    logger.debug("Leaf %d: z-score filter kept %d of %d points", cloud.leaf_id, int(keep.sum()), len(cloud))
    return replace(cloud, points=cloud.points[keep], pixel_indices=cloud.pixel_indices[keep], filtered=True)


def central_index(cloud: LeafCloud) -> int:
    """Index of the cloud point closest to the component-wise median."""
    median = np.median(cloud.points, axis=0)
    return int(np.argmin(np.linalg.norm(cloud.points - median, axis=1)))


def central_point(cloud: LeafCloud) -> Vec3:
    """Return the cloud point closest to the component-wise median of the cloud."""
    return as_vec3(cloud.points[central_index(cloud)], "center")


def estimate_normal(
    cloud: LeafCloud, viewpoint: Optional[npt.ArrayLike] = None, center: Optional[npt.ArrayLike] = None
) -> Vec3:
    """Return the unit normal of the best-fit plane, oriented toward ``viewpoint``.

    Parameters
    ----------
    cloud : LeafCloud
        Points to fit, at least three of them non-collinear.
    viewpoint : array-like, optional
        Sensor position in the cloud's frame. Defaults to the camera origin.
    center : array-like, optional
        Point used for the orientation test. Defaults to the centroid.
    """
    viewpoint = np.zeros(3) if viewpoint is None else np.asarray(viewpoint, dtype=np.float64)
    points = cloud.points
    centroid = points.mean(axis=0)
    reference = centroid if center is None else np.asarray(center, dtype=np.float64)

    if len(points) < 3:
        raise DegenerateCloudError(len(points), rank=min(len(points) - 1, 1))
    _, singular_values, right_vectors = np.linalg.svd(points - centroid, full_matrices=False)
    if singular_values[0] <= 0.0 or singular_values[1] <= 1e-12 * singular_values[0]:
        raise DegenerateCloudError(len(points), rank=int(np.sum(singular_values > 1e-12 * singular_values[0])))

    normal = right_vectors[2]
    view_direction = viewpoint - reference
    eigenvalues = singular_values**2 / len(points)
    if eigenvalues[1] - eigenvalues[2] <= EIGEN_TIE_TOLERANCE:
        # Two smallest variances coincide: take the candidate best aligned with the view.
        candidates = right_vectors[1:]
        normal = candidates[int(np.argmax(np.abs(candidates @ view_direction)))]

    if float(np.dot(normal, view_direction)) < 0.0:
        normal = -normal
    return as_vec3(normal / np.linalg.norm(normal), "normal")


def leaf_frame(cloud: LeafCloud, center: npt.ArrayLike, normal: npt.ArrayLike) -> LeafFrame:
    """Build the (t, b, n) frame from the uppermost cloud point.

    The reference point is the point with the smallest camera-frame y (image up);
    ``np.argmin`` returns the first minimum, i.e. the smallest row-major pixel index.
    """
    center = as_vec3(center, "center")
    normal = as_vec3(normal, "normal")
    reference = cloud.points[int(np.argmin(cloud.points[:, 1]))]
    edge = reference - center
    projected = edge - np.dot(edge, normal) * normal
    projected_norm = float(np.linalg.norm(projected))
    if projected_norm < TANGENT_TOLERANCE:
        raise DegenerateTangentError(projected_norm)
    tangent = projected / projected_norm
    bitangent = np.cross(normal, tangent)
    return LeafFrame(
        leaf_id=cloud.leaf_id,
        center=center,
        tangent=as_vec3(tangent, "tangent"),
        bitangent=as_vec3(bitangent, "bitangent"),
        normal=normal,
        reference_point=as_vec3(reference, "reference point"),
    )


def candidate_poses(frame: LeafFrame) -> PoseSet:
    """Return the leaf frame pose followed by its four rotations about the normal."""
    primary = quat_from_basis(frame.tangent, frame.bitangent, frame.normal)
    orientations = [primary] + [rotate_about_axis(primary, LEAF_NORMAL_AXIS, alpha) for alpha in ALPHA_SCHEDULE]
    return PoseSet(
        leaf_id=frame.leaf_id,
        poses=tuple(Pose(frame.center, orientation) for orientation in orientations),
        camera_distance=float(np.linalg.norm(frame.center)),
    )


@dataclass
class DroppedLeaf:
    """A leaf the pipeline could not turn into poses, with the reason."""

    leaf_id: int
    reason: str

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON representation."""
        return {"leaf_id": self.leaf_id, "reason": self.reason}


@dataclass
class PerceptionReport:
    """Everything the pipeline produced for one observation."""

    posesets: list[PoseSet] = field(default_factory=list)
    clouds: dict[int, LeafCloud] = field(default_factory=dict)
    dropped: list[DroppedLeaf] = field(default_factory=list)

    def to_dict(self, with_clouds: bool = True) -> dict[str, Any]:
        """Return the JSON representation."""
        data: dict[str, Any] = {
            "posesets": [poseset.to_dict() for poseset in self.posesets],
            "dropped": [dropped.to_dict() for dropped in self.dropped],
        }
        if with_clouds:
            data["clouds"] = [self.clouds[leaf_id].to_dict() for leaf_id in sorted(self.clouds)]
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PerceptionReport":
        """Create a report from its JSON representation."""
        clouds = [LeafCloud.from_dict(cloud) for cloud in data.get("clouds", [])]
        return cls(
            posesets=[PoseSet.from_dict(poseset) for poseset in data.get("posesets", [])],
            clouds={cloud.leaf_id: cloud for cloud in clouds},
            dropped=[DroppedLeaf(int(d["leaf_id"]), str(d["reason"])) for d in data.get("dropped", [])],
        )


class PerceptionPipeline:
    """Configurable runner of the per-mask perception chain."""

    def __init__(self, z_threshold: float = Z_THRESHOLD):
        """Initialize the pipeline with the outlier threshold."""
        self._z_threshold: float = z_threshold
        self._viewpoint: Vec3 = as_vec3(np.zeros(3), "viewpoint")

    @property
    def z_threshold(self) -> float:
        """Return the z-score threshold."""
        return self._z_threshold

    def set_viewpoint(self, viewpoint: npt.ArrayLike) -> "PerceptionPipeline":
        """Set the sensor position used to orient normals (camera frame)."""
        self._viewpoint = as_vec3(viewpoint, "viewpoint")
        return self

    def process_leaf(self, observation: Observation, mask: BinaryMask, leaf_id: int) -> tuple[PoseSet, LeafCloud]:
        """Run the chain on one mask, raising on per-leaf failure."""
        masked = mask_depth(observation.depth, mask)
        cloud = filter_outliers(backproject(masked, observation.intrinsics, leaf_id), self._z_threshold)
        center = central_point(cloud)
        normal = estimate_normal(cloud, self._viewpoint, center)
        return candidate_poses(leaf_frame(cloud, center, normal)), cloud

    def run(
        self, observation: Observation, masks: list[BinaryMask], leaf_ids: Optional[list[int]] = None
    ) -> PerceptionReport:
        """Process every mask and sort the surviving leaves by camera distance."""
        leaf_ids = list(range(len(masks))) if leaf_ids is None else leaf_ids
        report = PerceptionReport()
        for leaf_id, mask in zip(leaf_ids, masks):
            if mask.shape != observation.depth.shape:
                raise DimensionMismatchError(expected=observation.depth.shape, found=mask.shape)
            try:
                poseset, cloud = self.process_leaf(observation, mask, leaf_id)
            except PerceptionError as error:
                logger.warning("Dropping leaf %d: %s", leaf_id, error)
                report.dropped.append(DroppedLeaf(leaf_id, type(error).__name__))
                continue
            report.posesets.append(poseset)
            report.clouds[leaf_id] = cloud

        report.posesets.sort(key=lambda poseset: (poseset.camera_distance, poseset.leaf_id))
        logger.info("Perceived %d leaves, dropped %d", len(report.posesets), len(report.dropped))
        return report


def perceive(
    observation: Observation, masks: list[BinaryMask], intrinsics: Optional[CameraIntrinsics] = None
) -> list[PoseSet]:
    """Return the pose sets of all masks, sorted by camera distance.

    ``intrinsics`` overrides the observation's own when given.
    """
    if intrinsics is not None:
        observation = replace(observation, intrinsics=intrinsics)
    return PerceptionPipeline().run(observation, masks).posesets
