"""Manipulation workflow: approach every perceived leaf, grasp it and measure it.

For each batch the workflow moves the pose sets into the arm base frame, adds one
box obstacle per perceived leaf, calibrates the spectrometer and then walks the
leaves nearest-first. Each leaf gets up to five tries, one per candidate pose:
inverse kinematics, RRT-Connect planning, kinematic execution, grasp check and,
on success, a spectrum. The first success moves on to the next leaf. The arm
returns home along the executed path after every try that moved it.

Execution runs against the true leaves, not the perceived ones. A trajectory that
brushes a leaf other than its target fails the try, and every trajectory makes
the leaves not yet grasped sway by the setting's ``sway_sigma``, so later leaves
are approached with a stale view of where they are.
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional, Union

import numpy as np
import numpy.typing as npt

from leafgrasp.collision import (
    CollisionChecker,
    CollisionScene,
    arm_capsules,
    capsule_point_contact,
    leaf_box,
    segment_segment_distance,
)
from leafgrasp.exceptions import (
    ConfigurationError,
    GoalInCollisionError,
    NoSolutionError,
    PlanningError,
    StartInCollisionError,
)
from leafgrasp.geometry import Pose, Transform
from leafgrasp.kinematics import ArmModel, IKConfiguration, fk, solve_ik
from leafgrasp.perception import LeafCloud, PerceptionReport, PoseSet
from leafgrasp.planning import Path, PlannerConfig, RRTConnectPlanner
from leafgrasp.scenegen import NoiseModel, Scene
from leafgrasp.spectral import References, SpectralSample, SpectralSensorConfiguration, acquire_spectrum, calibrate

logger = logging.getLogger(__name__)

GOAL_COLLISION_RETRIES: int = 3
LEAF_SURFACE_SPACING: float = 0.004


class FailureReason(str, Enum):
    """Why an attempt on one candidate pose did not end in a grasp."""

    NONE = "none"
    IK_FAILED = "ik_failed"
    START_IN_COLLISION = "start_in_collision"
    GOAL_IN_COLLISION = "goal_in_collision"
    PLANNING_TIMEOUT = "planning_timeout"
    GOAL_NOT_REACHED = "goal_not_reached"
    GRASP_MISSED = "grasp_missed"
    LEAF_CONTACT = "leaf_contact"


_PLANNING_REASONS: dict[type, FailureReason] = {
    StartInCollisionError: FailureReason.START_IN_COLLISION,
    GoalInCollisionError: FailureReason.GOAL_IN_COLLISION,
}


@dataclass
class ApproachRecord:
    """Outcome of one candidate pose of one leaf."""

    leaf_id: int
    pose_index: int
    ik_ok: bool = False
    plan_ok: bool = False
    reached: bool = False
    grasped: bool = False
    spectrum: Optional[SpectralSample] = None
    failure_reason: FailureReason = FailureReason.NONE
    path: Optional[Path] = None
    position_error: Optional[float] = None
    angle_error: Optional[float] = None

    @property
    def is_approach(self) -> bool:
        """Whether a trajectory was planned and executed."""
        return self.plan_ok

    @property
    def is_success(self) -> bool:
        """Whether the leaf was grasped and measured."""
        return self.grasped and self.spectrum is not None

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON representation."""
        return {
            "leaf_id": self.leaf_id,
            "pose_index": self.pose_index,
            "ik_ok": self.ik_ok,
            "plan_ok": self.plan_ok,
            "reached": self.reached,
            "grasped": self.grasped,
            "failure_reason": self.failure_reason.value,
            "position_error": self.position_error,
            "angle_error": self.angle_error,
            "path": None if self.path is None else self.path.to_dict(),
            "spectrum": None if self.spectrum is None else self.spectrum.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ApproachRecord":
        """Create a record from its JSON representation."""
        return cls(
            leaf_id=int(data["leaf_id"]),
            pose_index=int(data["pose_index"]),
            ik_ok=bool(data.get("ik_ok", False)),
            plan_ok=bool(data.get("plan_ok", False)),
            reached=bool(data.get("reached", False)),
            grasped=bool(data.get("grasped", False)),
            spectrum=None if data.get("spectrum") is None else SpectralSample.from_dict(data["spectrum"]),
            failure_reason=FailureReason(data.get("failure_reason", "none")),
            path=None if data.get("path") is None else Path.from_dict(data["path"]),
            position_error=data.get("position_error"),
            angle_error=data.get("angle_error"),
        )


@dataclass
class BatchRun:
    """All attempts of one batch, with the base-frame clouds and obstacles they ran against."""

    scene_id: str
    posesets: list[PoseSet] = field(default_factory=list)
    approaches: list[ApproachRecord] = field(default_factory=list)
    obstacles: CollisionScene = field(default_factory=CollisionScene)
    clouds: list[LeafCloud] = field(default_factory=list)
    wall_time: float = 0.0
    seed: Optional[int] = None

    @property
    def approach_count(self) -> int:
        """Number of executed trajectories."""
        return sum(record.is_approach for record in self.approaches)

    @property
    def success_count(self) -> int:
        """Number of successful approaches."""
        return sum(record.is_success for record in self.approaches)

    @property
    def approached_leaves(self) -> set[int]:
        """Leaves with at least one executed trajectory."""
        return {record.leaf_id for record in self.approaches if record.is_approach}

    @property
    def grasped_leaves(self) -> set[int]:
        """Leaves with a successful approach."""
        return {record.leaf_id for record in self.approaches if record.is_success}

    def to_dict(self, with_timing: bool = False) -> dict[str, Any]:
        """Return the JSON representation.

        Wall time is left out unless requested, so reruns serialise identically.
        """
        data: dict[str, Any] = {
            "scene_id": self.scene_id,
            "seed": self.seed,
            "posesets": [poseset.to_dict() for poseset in self.posesets],
            "approaches": [record.to_dict() for record in self.approaches],
            "obstacles": self.obstacles.to_dict(),
            "clouds": [cloud.to_dict() for cloud in self.clouds],
        }
        if with_timing:
            data["wall_time"] = self.wall_time
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BatchRun":
        """Create a batch run from its JSON representation."""
        return cls(
            scene_id=str(data["scene_id"]),
            posesets=[PoseSet.from_dict(poseset) for poseset in data.get("posesets", [])],
            approaches=[ApproachRecord.from_dict(record) for record in data.get("approaches", [])],
            obstacles=CollisionScene.from_dict(data.get("obstacles", {})),
            clouds=[LeafCloud.from_dict(cloud) for cloud in data.get("clouds", [])],
            wall_time=float(data.get("wall_time", 0.0)),
            seed=None if data.get("seed") is None else int(data["seed"]),
        )


class GraspConfiguration:
    """Class to encapsulate the grasp verification parameters."""

    def __init__(self) -> None:
        """Initialize the grasp tolerances with their defaults."""
        self._tol_pos: float = 0.01
        self._tol_ang: float = 0.35
        self._approach_offset: float = 0.0

    @property
    def tol_pos(self) -> float:
        """Position tolerance in meters."""
        return self._tol_pos

    @property
    def tol_ang(self) -> float:
        """Normal misalignment tolerance in radians."""
        return self._tol_ang

    @property
    def approach_offset(self) -> float:
        """Shift of the gripper goal along the leaf's -n, meters."""
        return self._approach_offset

    def set_tol_pos(self, tol_pos: float) -> "GraspConfiguration":
        """Set the position tolerance."""
        if not tol_pos > 0.0:
            raise ConfigurationError(f"grasp position tolerance must be positive, got {tol_pos}")
        self._tol_pos = tol_pos
        return self

    def set_tol_ang(self, tol_ang: float) -> "GraspConfiguration":
        """Set the angular tolerance."""
        if not 0.0 < tol_ang <= np.pi / 2:
            raise ConfigurationError(f"grasp angular tolerance must lie in (0, pi/2], got {tol_ang}")
        self._tol_ang = tol_ang
        return self

    def set_approach_offset(self, offset: float) -> "GraspConfiguration":
        """Set the approach offset."""
        self._approach_offset = float(offset)
        return self

    def to_dict(self) -> dict[str, float]:
        """Return the JSON representation."""
        return {"tol_pos": self._tol_pos, "tol_ang": self._tol_ang, "approach_offset": self._approach_offset}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GraspConfiguration":
        """Create a configuration from its JSON representation."""
        return (
            cls()
            .set_tol_pos(float(data.get("tol_pos", 0.01)))
            .set_tol_ang(float(data.get("tol_ang", 0.35)))
            .set_approach_offset(float(data.get("approach_offset", 0.0)))
        )


def to_base_frame(posesets: list[PoseSet], extrinsic: Transform) -> list[PoseSet]:
    """Map camera-frame pose sets into the base frame; camera distances are kept."""
    return [poseset.transformed(extrinsic) for poseset in posesets]


def normal_misalignment(a: Pose, b: Pose) -> float:
    """Angle between the z axes of two poses, ignoring their sign."""
    return float(np.arccos(np.clip(abs(float(np.dot(a.normal, b.normal))), 0.0, 1.0)))


def grasp_check(ee_pose: Pose, gt_leaf: Pose, tol_pos: float = 0.01, tol_ang: float = 0.35) -> bool:
    """Whether the gripper sits on the leaf center with its normal along the leaf's.

    The leaf can be grasped from either face, so anti-parallel normals pass.
    """
    distance = float(np.linalg.norm(ee_pose.position - gt_leaf.position))
    return distance <= tol_pos and normal_misalignment(ee_pose, gt_leaf) <= tol_ang


def derive_seed(*keys: int) -> int:
    """Deterministic 32-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(key) & 0xFFFFFFFF for key in keys]).generate_state(1)[0])


def touches_foliage(arm: ArmModel, states: npt.ArrayLike, foliage: list[npt.NDArray[np.float64]]) -> bool:
    """Whether the arm touches any point of ``foliage`` at any of ``states``.

    Each entry of ``foliage`` holds the surface points of one leaf in the base
    frame. Leaves whose bounding sphere no capsule reaches are skipped.
    """
    leaves = [points for points in foliage if len(points) > 0]
    if not leaves:
        return False
    centers = np.array([points.mean(axis=0) for points in leaves])
    bounds = np.array([np.max(np.linalg.norm(points - center, axis=1)) for points, center in zip(leaves, centers)])
    for q in np.atleast_2d(np.asarray(states, dtype=np.float64)):
        capsules = arm_capsules(arm, q)
        capsule_index, leaf_index = np.divmod(np.arange(len(capsules.radii) * len(leaves)), len(leaves))
        distances = segment_segment_distance(
            capsules.starts[capsule_index],
            capsules.ends[capsule_index],
            centers[leaf_index],
            centers[leaf_index],
        )
        near = np.unique(leaf_index[distances <= capsules.radii[capsule_index] + bounds[leaf_index]])
        if any(capsule_point_contact(capsules, leaves[index]) for index in near):
            return True
    return False


class ManipulationWorkflow:
    """Runs batches on one arm with fixed planner, IK, grasp and sensor settings."""

    def __init__(
        self,
        arm: ArmModel,
        planner_config: Optional[PlannerConfig] = None,
        ik_configuration: Optional[IKConfiguration] = None,
        grasp_configuration: Optional[GraspConfiguration] = None,
        sensor: Optional[SpectralSensorConfiguration] = None,
    ):
        """Initialize the workflow."""
        self._arm: ArmModel = arm
        self._planner_config: PlannerConfig = PlannerConfig() if planner_config is None else planner_config
        self._ik_configuration: IKConfiguration = IKConfiguration() if ik_configuration is None else ik_configuration
        self._grasp: GraspConfiguration = GraspConfiguration() if grasp_configuration is None else grasp_configuration
        self._sensor: SpectralSensorConfiguration = SpectralSensorConfiguration() if sensor is None else sensor
        self._checker: CollisionChecker = CollisionChecker(arm, clearance=self._planner_config.clearance)

    @property
    def arm(self) -> ArmModel:
        """Return the arm."""
        return self._arm

    @property
    def grasp_configuration(self) -> GraspConfiguration:
        """Return the grasp configuration."""
        return self._grasp

    def goal_pose(self, pose: Pose) -> Pose:
        """Gripper goal for a candidate leaf pose."""
        if self._grasp.approach_offset == 0.0:
            return pose
        return Pose(pose.position - self._grasp.approach_offset * pose.normal, pose.orientation)

    def build_scene(self, posesets: list[PoseSet], clouds: dict[int, LeafCloud]) -> CollisionScene:
        """One box per perceived leaf, aligned with its first candidate pose (base frame)."""
        boxes = [
            leaf_box(clouds[poseset.leaf_id], poseset.poses[0]) for poseset in posesets if poseset.leaf_id in clouds
        ]
        return CollisionScene(tuple(boxes))

    def _solve_goal(self, goal: Pose, seed: int) -> npt.NDArray[np.float64]:
        """IK solution for ``goal``, preferring one free of collisions.

        Raises
        ------
        NoSolutionError
            If no attempt converged at all.
        """
        colliding: Optional[npt.NDArray[np.float64]] = None
        failure: Optional[NoSolutionError] = None
        for retry in range(GOAL_COLLISION_RETRIES):
            configuration = IKConfiguration.from_dict(self._ik_configuration.to_dict()).set_rng_seed(
                derive_seed(seed, retry)
            )
            if retry == 0:
                start = self._arm.home_configuration
            else:
                start = np.random.default_rng(derive_seed(seed, retry, 1)).uniform(
                    self._arm.lower_limits, self._arm.upper_limits
                )
            try:
                solution = solve_ik(self._arm, goal, start, configuration)
            except NoSolutionError as error:
                failure = error
                continue
            if not self._checker.collides(solution):
                return solution
            colliding = solution
        if colliding is not None:
            return colliding
        assert failure is not None
        raise failure

    def attempt(
        self,
        leaf_id: int,
        pose_index: int,
        pose: Pose,
        gt_leaf: Pose,
        seed: int,
        foliage: Optional[list[npt.NDArray[np.float64]]] = None,
    ) -> ApproachRecord:
        """Try one candidate pose from the home configuration.

        ``gt_leaf`` is where the target really is and ``foliage`` holds the surface
        points of the other leaves, both in the base frame.
        """
        record = ApproachRecord(leaf_id=leaf_id, pose_index=pose_index)
        goal = self.goal_pose(pose)
        try:
            q_goal = self._solve_goal(goal, seed)
        except NoSolutionError as error:
            logger.info("Leaf %d pose %d: %s", leaf_id, pose_index, error)
            record.failure_reason = FailureReason.IK_FAILED
            return record
        record.ik_ok = True

        planner_config = PlannerConfig.from_dict(self._planner_config.to_dict()).set_rng_seed(derive_seed(seed, 7))
        planner = RRTConnectPlanner(self._arm, self._checker.scene, planner_config)
        try:
            path = planner.plan(self._arm.home_configuration, q_goal)
        except PlanningError as error:
            logger.info("Leaf %d pose %d: %s", leaf_id, pose_index, error)
            record.failure_reason = _PLANNING_REASONS.get(type(error), FailureReason.PLANNING_TIMEOUT)
            return record
        record.path = planner.shortcut(path)
        record.plan_ok = True

        reached_pose = fk(self._arm, record.path.goal)
        record.position_error = float(np.linalg.norm(reached_pose.position - gt_leaf.position))
        record.angle_error = normal_misalignment(reached_pose, gt_leaf)
        if foliage and touches_foliage(self._arm, planner.densify(record.path), foliage):
            logger.info("Leaf %d pose %d: the arm brushed another leaf", leaf_id, pose_index)
            record.failure_reason = FailureReason.LEAF_CONTACT
            return record
        record.reached = (
            float(np.linalg.norm(reached_pose.position - goal.position)) <= self._ik_configuration.tol_pos
            and reached_pose.orientation.angle_to(goal.orientation) <= self._ik_configuration.tol_rot
        )
        if not record.reached:
            record.failure_reason = FailureReason.GOAL_NOT_REACHED
            return record

        record.grasped = grasp_check(reached_pose, gt_leaf, self._grasp.tol_pos, self._grasp.tol_ang)
        if not record.grasped:
            record.failure_reason = FailureReason.GRASP_MISSED
        return record

    def run_batch(
        self,
        scene: Scene,
        perception: Union[PerceptionReport, list[PoseSet]],
        extrinsic: Optional[Transform] = None,
        scene_id: str = "scene",
        rng_seed: int = 0,
        sway_sigma: Optional[float] = None,
    ) -> BatchRun:
        """Process every perceived leaf of ``scene`` nearest-first.

        ``perception`` holds camera-frame pose sets (and, in a report, the filtered
        clouds used as obstacles). ``extrinsic`` maps the camera frame to the base
        frame and defaults to the scene's camera mount. ``sway_sigma`` defaults to
        that of the scene's noise preset.
        """
        started = time.perf_counter()
        extrinsic = scene.extrinsic if extrinsic is None else extrinsic
        sway_sigma = NoiseModel.preset(scene.noise_preset).sway_sigma if sway_sigma is None else sway_sigma
        if not sway_sigma >= 0.0:
            raise ConfigurationError(f"sway_sigma must be non-negative, got {sway_sigma}")
        report = perception if isinstance(perception, PerceptionReport) else PerceptionReport(posesets=perception)
        camera_posesets = sorted(report.posesets, key=lambda poseset: (poseset.camera_distance, poseset.leaf_id))
        posesets = to_base_frame(camera_posesets, extrinsic)
        clouds = {leaf_id: cloud.transformed(extrinsic) for leaf_id, cloud in report.clouds.items()}
        obstacles = self.build_scene(posesets, clouds)

        rng = np.random.default_rng(derive_seed(rng_seed, 0xCA1))
        references: References = calibrate(self._sensor, rng)
        run = BatchRun(
            scene_id=scene_id,
            posesets=posesets,
            obstacles=obstacles,
            clouds=[clouds[leaf_id] for leaf_id in sorted(clouds)],
            seed=rng_seed,
        )

        world_to_base = extrinsic @ scene.camera_pose
        surfaces = [world_to_base.apply(leaf.sample_surface(LEAF_SURFACE_SPACING)) for leaf in scene.leaves]
        drift = np.zeros((len(scene.leaves), 3))
        swaying = np.ones(len(scene.leaves), dtype=bool)
        sway_rng = np.random.default_rng(derive_seed(rng_seed, 0x5A7))

        for poseset in posesets:
            leaf_id = poseset.leaf_id
            if not 0 <= leaf_id < len(scene.leaves):
                logger.warning("Leaf %d has no ground truth in scene %s; skipping", leaf_id, scene_id)
                continue
            gt_leaf = Pose.from_transform(extrinsic @ scene.leaf_in_camera(leaf_id).as_transform())
            self._checker.set_scene(obstacles.with_allowed_target(leaf_id))

            for pose_index, pose in enumerate(poseset.poses, start=1):
                target = Pose(gt_leaf.position + drift[leaf_id], gt_leaf.orientation)
                foliage = [points + drift[index] for index, points in enumerate(surfaces) if index != leaf_id]
                record = self.attempt(
                    leaf_id, pose_index, pose, target, derive_seed(rng_seed, leaf_id, pose_index), foliage
                )
                if record.grasped:
                    record.spectrum = acquire_spectrum(
                        scene.leaves[leaf_id].pigment,
                        self._sensor,
                        derive_seed(rng_seed, leaf_id, 0x5BEC),
                        references,
                    )
                run.approaches.append(record)
                if record.is_success:
                    swaying[leaf_id] = False
                if record.is_approach:
                    drift[swaying] += sway_rng.normal(0.0, sway_sigma, size=(int(swaying.sum()), 3))
                if record.is_success:
                    logger.info("Scene %s: grasped leaf %d with pose %d", scene_id, leaf_id, pose_index)
                    break
            else:
                logger.info("Scene %s: leaf %d not grasped after %d poses", scene_id, leaf_id, len(poseset.poses))

        run.wall_time = time.perf_counter() - started
        logger.info(
            "Scene %s: %d approaches, %d successful, %.2f s",
            scene_id,
            run.approach_count,
            run.success_count,
            run.wall_time,
        )
        return run


def run_batch(
    scene: Scene,
    perception: Union[PerceptionReport, list[PoseSet]],
    arm: ArmModel,
    extrinsic: Optional[Transform] = None,
    planner_config: Optional[PlannerConfig] = None,
    grasp_configuration: Optional[GraspConfiguration] = None,
    scene_id: str = "scene",
    rng_seed: int = 0,
    sway_sigma: Optional[float] = None,
) -> BatchRun:
    """Run the manipulation workflow on one perceived batch."""
    workflow = ManipulationWorkflow(arm, planner_config, grasp_configuration=grasp_configuration)
    return workflow.run_batch(scene, perception, extrinsic, scene_id, rng_seed, sway_sigma)
