"""Synthetic foliage: leaf surfaces, batches of leaves and their RGB-D renders.

Leaves are elliptical patches, optionally bent into a cylinder about their tangent
axis. Rendering casts one ray per pixel against every leaf surface and keeps the
nearest hit, which gives the depth map and a partition of the pixels into
instance masks. The noise model then perturbs depth and removes values along
mask boundaries, where real sensors lose them on thin foliage.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
import numpy.typing as npt
from scipy import ndimage

from leafgrasp.exceptions import EmptyRenderError, InvalidParamsError
from leafgrasp.geometry import (
    CameraIntrinsics,
    Pose,
    Transform,
    UnitQuat,
    Vec3,
    as_vec3,
    normalize,
    quat_from_basis,
)
from leafgrasp.perception import BinaryMask, DepthMap, Observation

logger = logging.getLogger(__name__)

MIN_STANDOFF: float = 0.3
MAX_STANDOFF: float = 3.0
DEFAULT_STANDOFF: float = 0.5
DEFAULT_CAMERA_HEIGHT: float = 0.4
PLANAR_CURVATURE: float = 1e-9
PLACEMENT_ATTEMPTS: int = 500
BACKGROUND_COLOR: tuple[int, int, int] = (60, 45, 30)
LEAF_COLORS: tuple[tuple[int, int, int], ...] = (
    (46, 139, 87),
    (85, 170, 60),
    (34, 110, 50),
    (120, 180, 70),
    (60, 150, 110),
    (20, 90, 40),
)


@dataclass(frozen=True)
class NoiseModel:
    """Noise of a simulated setting.

    The depth terms degrade a render. ``sway_sigma`` is the per-axis standard
    deviation, in meters, by which every leaf not yet grasped drifts each time the
    arm runs a trajectory through the plant, so perception grows stale as a batch
    goes on.
    """

    depth_sigma: float = 0.0
    boundary_dropout_px: int = 0
    dropout_rate: float = 0.0
    sway_sigma: float = 0.0

    def __post_init__(self) -> None:
        if not self.depth_sigma >= 0.0:
            raise InvalidParamsError("depth_sigma", self.depth_sigma, "must be non-negative")
        if self.boundary_dropout_px < 0:
            raise InvalidParamsError("boundary_dropout_px", self.boundary_dropout_px, "must be non-negative")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise InvalidParamsError("dropout_rate", self.dropout_rate, "must lie in [0, 1]")
        if not self.sway_sigma >= 0.0:
            raise InvalidParamsError("sway_sigma", self.sway_sigma, "must be non-negative")

    @classmethod
    def preset(cls, name: str) -> "NoiseModel":
        """Return one of the named presets: ``none``, ``lab`` or ``field``."""
        if name not in NOISE_PRESETS:
            raise InvalidParamsError("preset", name, f"must be one of {sorted(NOISE_PRESETS)}")
        return NOISE_PRESETS[name]

    @property
    def is_noiseless(self) -> bool:
        """Whether rendering with this model leaves depth untouched."""
        return self.depth_sigma == 0.0 and (self.boundary_dropout_px == 0 or self.dropout_rate == 0.0)

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON representation."""
        return {
            "depth_sigma": self.depth_sigma,
            "boundary_dropout_px": self.boundary_dropout_px,
            "dropout_rate": self.dropout_rate,
            "sway_sigma": self.sway_sigma,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "NoiseModel":
        """Create a noise model from its JSON representation."""
        return cls(
            depth_sigma=float(data.get("depth_sigma", 0.0)),
            boundary_dropout_px=int(data.get("boundary_dropout_px", 0)),
            dropout_rate=float(data.get("dropout_rate", 0.0)),
            sway_sigma=float(data.get("sway_sigma", 0.0)),
        )


NOISE_PRESETS: dict[str, NoiseModel] = {
    "none": NoiseModel(),
    "lab": NoiseModel(depth_sigma=0.001, boundary_dropout_px=1, dropout_rate=0.3, sway_sigma=0.0035),
    "field": NoiseModel(depth_sigma=0.003, boundary_dropout_px=3, dropout_rate=0.7, sway_sigma=0.0045),
}


@dataclass(frozen=True, eq=False)
class LeafSpec:
    """Ground-truth geometry of one leaf.

    In the leaf frame the tangent is x, the bitangent y and the normal z. A point at
    arc-length coordinates ``(s, w)`` lies at ``(s, sin(k w) / k, (1 - cos(k w)) / k)``
    for curvature ``k``, which reduces to ``(s, w, 0)`` for a flat leaf. Points with
    ``(2 s / length)^2 + (2 w / width)^2 <= 1`` belong to the leaf.
    """

    gt_pose: Pose
    length: float
    width: float
    curvature: float = 0.0
    stem_dir: Vec3 = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    pigment: float = 1.0

    def __post_init__(self) -> None:
        if not self.length > 0.0:
            raise InvalidParamsError("length", self.length, "must be positive")
        if not self.width > 0.0:
            raise InvalidParamsError("width", self.width, "must be positive")
        if not abs(self.curvature) * self.length < np.pi:
            raise InvalidParamsError("curvature", self.curvature, "|curvature| * length must stay below pi")
        if not self.pigment > 0.0:
            raise InvalidParamsError("pigment", self.pigment, "must be positive")
        object.__setattr__(self, "stem_dir", as_vec3(normalize(self.stem_dir), "stem_dir"))

    @property
    def is_planar(self) -> bool:
        """Whether the curvature is negligible."""
        return abs(self.curvature) < PLANAR_CURVATURE

    def local_surface(self, s: npt.ArrayLike, w: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Map arc-length coordinates to leaf-frame points, ``(N, 3)``."""
        s = np.asarray(s, dtype=np.float64).ravel()
        w = np.asarray(w, dtype=np.float64).ravel()
        if self.is_planar:
            return np.column_stack([s, w, np.zeros_like(s)])
        k = self.curvature
        return np.column_stack([s, np.sin(k * w) / k, (1.0 - np.cos(k * w)) / k])

    def local_normals(self, w: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Unit surface normals at arc-length coordinate ``w``, leaf frame."""
        w = np.asarray(w, dtype=np.float64).ravel()
        angle = self.curvature * w
        return np.column_stack([np.zeros_like(w), -np.sin(angle), np.cos(angle)])

    def contains(self, s: npt.ArrayLike, w: npt.ArrayLike) -> npt.NDArray[np.bool_]:
        """Whether arc-length coordinates fall inside the leaf outline."""
        s = np.asarray(s, dtype=np.float64)
        w = np.asarray(w, dtype=np.float64)
        return (2.0 * s / self.length) ** 2 + (2.0 * w / self.width) ** 2 <= 1.0

    def sample_surface(self, spacing: float = 0.002) -> npt.NDArray[np.float64]:
        """Return world-frame points on a regular arc-length grid inside the outline."""
        s, w = np.meshgrid(
            np.arange(-self.length / 2, self.length / 2 + spacing / 2, spacing),
            np.arange(-self.width / 2, self.width / 2 + spacing / 2, spacing),
            indexing="ij",
        )
        inside = self.contains(s, w)
        return self.gt_pose.as_transform().apply(self.local_surface(s[inside], w[inside]))

    def intersect(self, origin: npt.ArrayLike, directions: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Ray parameter of the first hit of each ray, ``inf`` on a miss.

        Parameters
        ----------
        origin : array-like of shape (3,)
            Common ray origin, leaf frame.
        directions : array-like of shape (N, 3)
            Ray directions, leaf frame. With unit-depth camera rays the parameter is
            the camera depth of the hit.
        """
        o = np.asarray(origin, dtype=np.float64).reshape(3)
        d = np.atleast_2d(np.asarray(directions, dtype=np.float64))
        hits = np.full(len(d), np.inf)

        if self.is_planar:
            facing = np.abs(d[:, 2]) > 1e-15
            lam = np.full(len(d), -1.0)
            lam[facing] = -o[2] / d[facing, 2]
            points = o + lam[:, None] * d
            valid = facing & (lam > 0.0) & self.contains(points[:, 0], points[:, 1])
            hits[valid] = lam[valid]
            return hits

        # Cylinder k (y^2 + z^2) - 2 z = 0, written without dividing by k.
        k = self.curvature
        a = k * (d[:, 1] ** 2 + d[:, 2] ** 2)
        b = 2.0 * k * (o[1] * d[:, 1] + o[2] * d[:, 2]) - 2.0 * d[:, 2]
        c = k * (o[1] ** 2 + o[2] ** 2) - 2.0 * o[2]
        discriminant = b * b - 4.0 * a * c
        real = (discriminant >= 0.0) & (np.abs(a) > 1e-15)
        root = np.sqrt(np.where(real, discriminant, 0.0))
        q = -0.5 * (b + np.where(b >= 0.0, root, -root))
        with np.errstate(divide="ignore", invalid="ignore"):
            first = np.where(real, q / a, np.nan)
            second = np.where(real, c / q, np.nan)
        near = np.fmin(first, second)
        far = np.fmax(first, second)

        for candidate in (far, near):
            points = o + np.nan_to_num(candidate, nan=0.0)[:, None] * d
            angle = np.arctan2(k * points[:, 1], 1.0 - k * points[:, 2])
            valid = (
                real
                & np.isfinite(candidate)
                & (candidate > 0.0)
                & (np.abs(angle) < np.pi / 2)
                & self.contains(points[:, 0], angle / k)
            )
            hits[valid] = candidate[valid]
        return hits

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON representation."""
        return {
            "gt_pose": self.gt_pose.to_dict(),
            "length": self.length,
            "width": self.width,
            "curvature": self.curvature,
            "stem_dir": [float(v) for v in self.stem_dir],
            "pigment": self.pigment,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LeafSpec":
        """Create a leaf from its JSON representation."""
        return cls(
            gt_pose=Pose.from_dict(data["gt_pose"]),
            length=float(data["length"]),
            width=float(data["width"]),
            curvature=float(data.get("curvature", 0.0)),
            stem_dir=np.asarray(data.get("stem_dir", [1.0, 0.0, 0.0]), dtype=np.float64),
            pigment=float(data.get("pigment", 1.0)),
        )


@dataclass(frozen=True, eq=False)
class LeafParameters:
    """Placement and shape ranges used by :func:`gen_leaf`.

    ``facing`` is the direction the leaf's upper face points to (toward the camera)
    and ``up`` the world direction its stem tip should lean toward.
    """

    center: Vec3
    facing: Vec3 = field(default_factory=lambda: np.array([-1.0, 0.0, 0.0]))
    up: Vec3 = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    length: float = 0.08
    width: float = 0.04
    curvature: float = 0.0
    max_tilt: float = 0.35
    max_twist: float = 0.5
    pigment_range: tuple[float, float] = (0.85, 1.15)

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", as_vec3(self.center, "center"))
        object.__setattr__(self, "facing", as_vec3(normalize(self.facing), "facing"))
        object.__setattr__(self, "up", as_vec3(normalize(self.up), "up"))
        if not 0.0 <= self.max_tilt < np.pi / 2:
            raise InvalidParamsError("max_tilt", self.max_tilt, "must lie in [0, pi/2)")
        if not 0.0 <= self.max_twist <= np.pi:
            raise InvalidParamsError("max_twist", self.max_twist, "must lie in [0, pi]")
        low, high = self.pigment_range
        if not 0.0 < low <= high:
            raise InvalidParamsError("pigment_range", self.pigment_range, "must be an increasing positive pair")


def _perpendicular(vector: Vec3) -> Vec3:
    helper = np.array([1.0, 0.0, 0.0]) if abs(vector[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    return normalize(np.cross(vector, helper))


def gen_leaf(rng_seed: int, params: LeafParameters) -> LeafSpec:
    """Draw one leaf around ``params.center``.

    The normal is ``params.facing`` tilted by at most ``max_tilt`` about a random
    in-plane axis; the tangent is ``params.up`` projected onto the leaf plane and
    twisted about the normal by at most ``max_twist``.
    """
    rng = np.random.default_rng(rng_seed)
    tilt_axis = UnitQuat.from_axis_angle(params.facing, rng.uniform(0.0, 2.0 * np.pi)).rotate(
        _perpendicular(params.facing)
    )
    normal = UnitQuat.from_axis_angle(tilt_axis, rng.uniform(0.0, params.max_tilt)).rotate(params.facing)

    up = params.up - np.dot(params.up, normal) * normal
    if np.linalg.norm(up) < 1e-6:
        up = _perpendicular(normal)
    tangent = UnitQuat.from_axis_angle(normal, rng.uniform(-params.max_twist, params.max_twist)).rotate(
        normalize(up)
    )
    tangent = normalize(tangent - np.dot(tangent, normal) * normal)
    bitangent = np.cross(normal, tangent)

    return LeafSpec(
        gt_pose=Pose(params.center, quat_from_basis(tangent, bitangent, normal)),
        length=params.length,
        width=params.width,
        curvature=params.curvature,
        stem_dir=tangent,
        pigment=float(rng.uniform(*params.pigment_range)),
    )


def default_camera_mount(height: float = DEFAULT_CAMERA_HEIGHT) -> Transform:
    """Camera-to-world transform of a camera at ``height`` looking along world +x.

    Image right is world -y and image down is world -z.
    """
    rotation = UnitQuat.from_matrix(np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]))
    return Transform(rotation, np.array([0.0, 0.0, height]))


@dataclass(frozen=True, eq=False)
class Scene:
    """A batch of leaves in front of a camera.

    ``camera_pose`` maps world coordinates to camera coordinates.
    """

    leaves: tuple[LeafSpec, ...]
    camera_pose: Transform
    standoff: float = DEFAULT_STANDOFF
    seed: Optional[int] = None
    occlusion_level: float = 0.0
    noise_preset: str = "none"

    def __post_init__(self) -> None:
        object.__setattr__(self, "leaves", tuple(self.leaves))
        if not MIN_STANDOFF <= self.standoff <= MAX_STANDOFF:
            raise InvalidParamsError("standoff", self.standoff, f"must lie in [{MIN_STANDOFF}, {MAX_STANDOFF}] m")
        if not 0.0 <= self.occlusion_level <= 1.0:
            raise InvalidParamsError("occlusion_level", self.occlusion_level, "must lie in [0, 1]")
        if self.noise_preset not in NOISE_PRESETS:
            raise InvalidParamsError("noise_preset", self.noise_preset, f"must be one of {sorted(NOISE_PRESETS)}")

    @property
    def extrinsic(self) -> Transform:
        """Camera-to-world transform, the {C} to {B} mapping of the workflow."""
        return self.camera_pose.inverse()

    def leaf_in_camera(self, index: int) -> Pose:
        """Ground-truth pose of a leaf in the camera frame."""
        return Pose.from_transform(self.camera_pose @ self.leaves[index].gt_pose.as_transform())

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON representation."""
        return {
            "seed": self.seed,
            "standoff": self.standoff,
            "occlusion_level": self.occlusion_level,
            "noise_preset": self.noise_preset,
            "camera_pose": self.camera_pose.to_dict(),
            "leaves": [leaf.to_dict() for leaf in self.leaves],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Scene":
        """Create a scene from its JSON representation."""
        return cls(
            leaves=tuple(LeafSpec.from_dict(leaf) for leaf in data["leaves"]),
            camera_pose=Transform.from_dict(data["camera_pose"]),
            standoff=float(data.get("standoff", DEFAULT_STANDOFF)),
            seed=None if data.get("seed") is None else int(data["seed"]),
            occlusion_level=float(data.get("occlusion_level", 0.0)),
            noise_preset=str(data.get("noise_preset", "none")),
        )


def _projected_radius(center: Vec3, radius: float) -> float:
    """Angular half-size, in normalised image units, of a sphere seen from the camera."""
    return radius / max(float(center[2]) - radius, 1e-3)


def gen_batch(
    rng_seed: int,
    n_leaves: int,
    occlusion_level: float = 0.0,
    standoff: float = DEFAULT_STANDOFF,
    camera_to_world: Optional[Transform] = None,
    noise_preset: str = "none",
) -> Scene:
    """Place ``n_leaves`` leaves in the camera frustum at about ``standoff`` meters.

    Each leaf after the first overlaps a previously placed one in the image with
    probability ``occlusion_level``, in front of or behind it. All other leaves keep
    a clear gap to every neighbour, so with ``occlusion_level = 0`` no two masks
    share a pixel.
    """
    if n_leaves < 1:
        raise InvalidParamsError("n_leaves", n_leaves, "must be at least 1")
    if not 0.0 <= occlusion_level <= 1.0:
        raise InvalidParamsError("occlusion_level", occlusion_level, "must lie in [0, 1]")
    if not MIN_STANDOFF <= standoff <= MAX_STANDOFF:
        raise InvalidParamsError("standoff", standoff, f"must lie in [{MIN_STANDOFF}, {MAX_STANDOFF}] m")

    camera_to_world = default_camera_mount() if camera_to_world is None else camera_to_world
    rng = np.random.default_rng(rng_seed)
    camera_origin = camera_to_world.translation
    world_up = camera_to_world.rotation.rotate(np.array([0.0, -1.0, 0.0]))

    centers: list[Vec3] = []
    radii: list[float] = []
    leaves: list[LeafSpec] = []
    for index in range(n_leaves):
        length = float(rng.uniform(0.06, 0.10))
        width = length * float(rng.uniform(0.45, 0.6))
        curvature = float(rng.uniform(-6.0, 6.0))
        radius = length / 2.0
        occluding = index > 0 and bool(rng.random() < occlusion_level)

        center: Optional[Vec3] = None
        for _ in range(PLACEMENT_ATTEMPTS):
            candidate = _sample_center(rng, standoff, radius, occluding, centers, radii)
            if _fits_frustum(candidate, radius) and (occluding or _is_separated(candidate, radius, centers, radii)):
                center = candidate
                break
        if center is None:
            raise InvalidParamsError("n_leaves", n_leaves, "too many leaves to place in the camera frustum")

        centers.append(center)
        radii.append(radius)
        world_center = camera_to_world.apply(center)
        params = LeafParameters(
            center=world_center,
            facing=camera_origin - world_center,
            up=world_up,
            length=length,
            width=width,
            curvature=curvature,
        )
        leaves.append(gen_leaf(int(rng.integers(2**32)), params))

    logger.debug("Generated batch of %d leaves with seed %d", n_leaves, rng_seed)
    return Scene(
        leaves=tuple(leaves),
        camera_pose=camera_to_world.inverse(),
        standoff=standoff,
        seed=rng_seed,
        occlusion_level=occlusion_level,
        noise_preset=noise_preset,
    )


def _sample_center(
    rng: np.random.Generator,
    standoff: float,
    radius: float,
    occluding: bool,
    centers: list[Vec3],
    radii: list[float],
) -> Vec3:
    """Draw a camera-frame leaf center."""
    if not occluding:
        depth = standoff + rng.uniform(-0.03, 0.03)
        return np.array([rng.uniform(-0.4, 0.4) * depth, rng.uniform(-0.3, 0.3) * depth, depth])

    anchor = int(rng.integers(len(centers)))
    anchor_center = centers[anchor]
    depth = anchor_center[2] + rng.choice([-1.0, 1.0]) * rng.uniform(0.02, 0.05)
    reach = (radii[anchor] + radius) * rng.uniform(0.4, 0.8)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    offset = reach * np.array([np.cos(angle), np.sin(angle)])
    lateral = anchor_center[:2] / anchor_center[2] * depth + offset
    return np.array([lateral[0], lateral[1], depth])


def _fits_frustum(center: Vec3, radius: float) -> bool:
    reach = _projected_radius(center, radius)
    return bool(abs(center[0] / center[2]) + reach <= 0.48 and abs(center[1] / center[2]) + reach <= 0.36)


def _is_separated(center: Vec3, radius: float, centers: list[Vec3], radii: list[float]) -> bool:
    """Whether a leaf keeps clear of every placed leaf, in the image and in space."""
    for other, other_radius in zip(centers, radii):
        image_gap = float(np.linalg.norm(center[:2] / center[2] - other[:2] / other[2]))
        if image_gap <= 1.1 * (_projected_radius(center, radius) + _projected_radius(other, other_radius)) + 0.01:
            return False
        if float(np.linalg.norm(center - other)) <= radius + other_radius + 0.03:
            return False
    return True


@dataclass(frozen=True, eq=False)
class GtRecord:
    """Ground truth for one rendered leaf, camera frame."""

    leaf_id: int
    pose: Pose
    world_pose: Pose
    pixel_count: int

    @property
    def center(self) -> Vec3:
        """True leaf center."""
        return self.pose.position

    @property
    def normal(self) -> Vec3:
        """True leaf normal, facing the camera for generated leaves."""
        return self.pose.normal

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON representation."""
        return {
            "leaf_id": self.leaf_id,
            "pose_camera": self.pose.to_dict(),
            "pose_world": self.world_pose.to_dict(),
            "pixel_count": self.pixel_count,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GtRecord":
        """Create a record from its JSON representation."""
        return cls(
            leaf_id=int(data["leaf_id"]),
            pose=Pose.from_dict(data["pose_camera"]),
            world_pose=Pose.from_dict(data["pose_world"]),
            pixel_count=int(data["pixel_count"]),
        )


def boundary_band(mask: npt.NDArray[np.bool_], width: int) -> npt.NDArray[np.bool_]:
    """Pixels of ``mask`` within ``width`` pixels of its edge (8-connected)."""
    if width <= 0:
        return np.zeros_like(mask, dtype=bool)
    eroded = ndimage.binary_erosion(mask, structure=np.ones((3, 3), dtype=bool), iterations=width, border_value=0)
    return np.asarray(mask & ~eroded, dtype=bool)


def render(
    scene: Scene, intrinsics: CameraIntrinsics, noise: Optional[NoiseModel] = None, rng_seed: Optional[int] = None
) -> tuple[Observation, list[BinaryMask], list[GtRecord]]:
    """Ray-cast ``scene`` into an RGB-D observation with instance masks.

    Masks and ground truth come from the noiseless z-buffer. Gaussian depth noise is
    applied first, then depth inside each mask's boundary band is zeroed with
    probability ``noise.dropout_rate``. ``rng_seed`` defaults to the scene seed.
    """
    noise = NoiseModel() if noise is None else noise
    height, width = intrinsics.shape
    rays = intrinsics.pixel_rays()

    depth_stack = np.full((len(scene.leaves), height * width), np.inf)
    for index, leaf in enumerate(scene.leaves):
        leaf_in_camera = scene.leaf_in_camera(index).as_transform()
        rotation = leaf_in_camera.rotation.as_matrix()
        origin = -rotation.T @ leaf_in_camera.translation
        depth_stack[index] = leaf.intersect(origin, rays @ rotation)

    if len(scene.leaves) > 0:
        nearest = depth_stack.min(axis=0)
        owner = depth_stack.argmin(axis=0)
    else:
        nearest = np.full(height * width, np.inf)
        owner = np.zeros(height * width, dtype=np.int64)
    hit = np.isfinite(nearest)
    if not hit.any():
        raise EmptyRenderError(len(scene.leaves))

    depth = np.where(hit, nearest, 0.0).reshape(height, width)
    masks = [(hit & (owner == index)).reshape(height, width) for index in range(len(scene.leaves))]

    rng = np.random.default_rng(scene.seed if rng_seed is None else rng_seed)
    valid = hit.reshape(height, width)
    if noise.depth_sigma > 0.0:
        depth = np.where(valid, np.maximum(depth + rng.normal(0.0, noise.depth_sigma, depth.shape), 0.0), 0.0)
    if noise.boundary_dropout_px > 0 and noise.dropout_rate > 0.0:
        band = np.zeros((height, width), dtype=bool)
        for mask in masks:
            band |= boundary_band(mask, noise.boundary_dropout_px)
        depth[band & (rng.random(depth.shape) < noise.dropout_rate)] = 0.0

    image = np.empty((height, width, 3), dtype=np.uint8)
    image[:] = BACKGROUND_COLOR
    for index, mask in enumerate(masks):
        image[mask] = LEAF_COLORS[index % len(LEAF_COLORS)]

    extrinsic = scene.extrinsic
    ground_truth = []
    for index, mask in enumerate(masks):
        pose = scene.leaf_in_camera(index)
        ground_truth.append(
            GtRecord(
                leaf_id=index,
                pose=pose,
                world_pose=Pose.from_transform(extrinsic @ pose.as_transform()),
                pixel_count=int(mask.sum()),
            )
        )

    logger.debug("Rendered %d leaves covering %d pixels", len(masks), int(valid.sum()))
    observation = Observation(image=image, depth=DepthMap(depth), intrinsics=intrinsics)
    return observation, [BinaryMask(mask) for mask in masks], ground_truth
