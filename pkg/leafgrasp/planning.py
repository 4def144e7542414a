"""Joint-space motion planning with RRT-Connect and random shortcutting.

Edges are validated at discrete states. With a positive obstacle clearance the
states are also spaced so that no point of the arm travels more than twice the
clearance between two of them; a state that keeps the clearance then keeps the
motion to its neighbours free of contact.
"""

import logging
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
import numpy.typing as npt

from leafgrasp.collision import CollisionChecker, CollisionScene, joint_sweep_radii
from leafgrasp.exceptions import (
    ConfigurationError,
    GoalInCollisionError,
    PlanningTimeoutError,
    StartInCollisionError,
)
from leafgrasp.kinematics import ArmModel, JointVector

logger = logging.getLogger(__name__)

RESOLUTION_FRACTION: float = 0.25
DEFAULT_CLEARANCE: float = 0.01


class PlannerConfig:
    """Class to encapsulate the parameters of an RRT-Connect query."""

    def __init__(self) -> None:
        """Initialize the planner parameters with their defaults."""
        self._step_size: float = 0.2
        self._goal_bias: float = 0.05
        self._max_iterations: int = 5000
        self._rng_seed: int = 0
        self._shortcut_attempts: int = 100
        self._joint_weights: Optional[npt.NDArray[np.float64]] = None
        self._clearance: float = DEFAULT_CLEARANCE

    @property
    def step_size(self) -> float:
        """Largest tree extension, radians."""
        return self._step_size

    @property
    def resolution(self) -> float:
        """Largest per-joint change between validated states, radians."""
        return self._step_size * RESOLUTION_FRACTION

    @property
    def goal_bias(self) -> float:
        """Probability of sampling the other tree's root."""
        return self._goal_bias

    @property
    def max_iterations(self) -> int:
        """Iteration budget."""
        return self._max_iterations

    @property
    def rng_seed(self) -> int:
        """Seed of the sampler."""
        return self._rng_seed

    @property
    def shortcut_attempts(self) -> int:
        """Shortcut attempts applied after a successful query."""
        return self._shortcut_attempts

    @property
    def clearance(self) -> float:
        """Distance kept from obstacles, meters."""
        return self._clearance

    def joint_weights(self, dof: int) -> npt.NDArray[np.float64]:
        """Per-joint weights of the joint-space metric."""
        if self._joint_weights is None:
            return np.ones(dof)
        if len(self._joint_weights) != dof:
            raise ConfigurationError(f"{len(self._joint_weights)} joint weights given for a {dof}-joint arm")
        return self._joint_weights

    def set_step_size(self, step_size: float) -> "PlannerConfig":
        """Set the extension step."""
        if not step_size > 0.0:
            raise ConfigurationError(f"step_size must be positive, got {step_size}")
        self._step_size = step_size
        return self

    def set_goal_bias(self, goal_bias: float) -> "PlannerConfig":
        """Set the goal bias."""
        if not 0.0 <= goal_bias <= 1.0:
            raise ConfigurationError(f"goal_bias must lie in [0, 1], got {goal_bias}")
        self._goal_bias = goal_bias
        return self

    def set_max_iterations(self, max_iterations: int) -> "PlannerConfig":
        """Set the iteration budget."""
        if max_iterations < 1:
            raise ConfigurationError(f"max_iterations must be at least 1, got {max_iterations}")
        self._max_iterations = max_iterations
        return self

    def set_rng_seed(self, rng_seed: int) -> "PlannerConfig":
        """Set the sampler seed."""
        self._rng_seed = int(rng_seed)
        return self

    def set_shortcut_attempts(self, attempts: int) -> "PlannerConfig":
        """Set the number of shortcut attempts."""
        if attempts < 0:
            raise ConfigurationError(f"shortcut attempts must be non-negative, got {attempts}")
        self._shortcut_attempts = attempts
        return self

    def set_clearance(self, clearance: float) -> "PlannerConfig":
        """Set the obstacle clearance; zero validates at the joint resolution only."""
        if not clearance >= 0.0:
            raise ConfigurationError(f"clearance must be non-negative, got {clearance}")
        self._clearance = clearance
        return self

    def set_joint_weights(self, weights: npt.ArrayLike) -> "PlannerConfig":
        """Set the per-joint metric weights."""
        array = np.asarray(weights, dtype=np.float64).ravel()
        if not np.all(array > 0.0):
            raise ConfigurationError(f"joint weights must be positive, got {array.tolist()}")
        self._joint_weights = array
        return self

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON representation."""
        data: dict[str, Any] = {
            "step_size": self._step_size,
            "goal_bias": self._goal_bias,
            "max_iterations": self._max_iterations,
            "rng_seed": self._rng_seed,
            "shortcut_attempts": self._shortcut_attempts,
            "clearance": self._clearance,
        }
        if self._joint_weights is not None:
            data["joint_weights"] = self._joint_weights.tolist()
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PlannerConfig":
        """Create a configuration from its JSON representation."""
        config = (
            cls()
            .set_step_size(float(data.get("step_size", 0.2)))
            .set_goal_bias(float(data.get("goal_bias", 0.05)))
            .set_max_iterations(int(data.get("max_iterations", 5000)))
            .set_rng_seed(int(data.get("rng_seed", 0)))
            .set_shortcut_attempts(int(data.get("shortcut_attempts", 100)))
            .set_clearance(float(data.get("clearance", DEFAULT_CLEARANCE)))
        )
        if data.get("joint_weights") is not None:
            config = config.set_joint_weights(data["joint_weights"])
        return config


def interpolate(
    a: npt.ArrayLike,
    b: npt.ArrayLike,
    resolution: float,
    sweep_radii: Optional[npt.ArrayLike] = None,
    max_sweep: float = 0.0,
) -> npt.NDArray[np.float64]:
    """States from ``a`` (excluded) to ``b`` (included), at most ``resolution`` apart per joint.

    Given per-joint ``sweep_radii`` and a positive ``max_sweep``, consecutive states
    are also close enough that ``sweep_radii @ |step|`` stays within ``max_sweep``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    steps = max(1, int(np.ceil(float(np.max(np.abs(b - a))) / resolution)))
    if sweep_radii is not None and max_sweep > 0.0:
        sweep = float(np.asarray(sweep_radii, dtype=np.float64) @ np.abs(b - a))
        steps = max(steps, int(np.ceil(sweep / max_sweep)))
    fractions = np.arange(1, steps + 1)[:, None] / steps
    return np.asarray(a + fractions * (b - a))


@dataclass(frozen=True, eq=False)
class Path:
    """Joint-space path through ``waypoints``, validated every ``resolution`` radians."""

    waypoints: npt.NDArray[np.float64]
    resolution: float

    def __post_init__(self) -> None:
        waypoints = np.array(self.waypoints, dtype=np.float64)
        if waypoints.ndim != 2 or len(waypoints) == 0:
            raise ConfigurationError("a path needs a non-empty (N, dof) array of waypoints")
        waypoints.setflags(write=False)
        object.__setattr__(self, "waypoints", waypoints)

    def __len__(self) -> int:
        return len(self.waypoints)

    @property
    def start(self) -> JointVector:
        """First waypoint."""
        return self.waypoints[0]

    @property
    def goal(self) -> JointVector:
        """Last waypoint."""
        return self.waypoints[-1]

    def densified(self, resolution: Optional[float] = None) -> npt.NDArray[np.float64]:
        """States at most ``resolution`` apart per joint (the path's own by default), waypoints included."""
        resolution = self.resolution if resolution is None else resolution
        states = [self.waypoints[:1]]
        for a, b in zip(self.waypoints[:-1], self.waypoints[1:]):
            states.append(interpolate(a, b, resolution))
        return np.concatenate(states)

    def arc_length(self, weights: Optional[npt.ArrayLike] = None) -> float:
        """Joint-space length under the weighted Euclidean metric."""
        weights = np.ones(self.waypoints.shape[1]) if weights is None else np.asarray(weights, dtype=np.float64)
        return float(np.sum(np.linalg.norm(np.diff(self.waypoints, axis=0) * weights, axis=1)))

    def reversed(self) -> "Path":
        """The same path walked backwards."""
        return Path(self.waypoints[::-1], self.resolution)

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON representation."""
        return {"resolution": self.resolution, "waypoints": self.waypoints.tolist()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Path":
        """Create a path from its JSON representation."""
        return cls(np.asarray(data["waypoints"], dtype=np.float64), float(data["resolution"]))


class _Tree:
    """Growing RRT stored in flat arrays."""

    def __init__(self, root: JointVector, weights: npt.NDArray[np.float64], capacity: int):
        self.nodes = np.empty((capacity, len(root)))
        self.parents = np.full(capacity, -1, dtype=np.int64)
        self.nodes[0] = root
        self.size = 1
        self._weights = weights

    @property
    def root(self) -> JointVector:
        return np.asarray(self.nodes[0])

    def nearest(self, q: JointVector) -> int:
        deltas = (self.nodes[: self.size] - q) * self._weights
        return int(np.argmin(np.einsum("ij,ij->i", deltas, deltas)))

    def add(self, q: JointVector, parent: int) -> int:
        if self.size == len(self.nodes):
            self.nodes = np.concatenate([self.nodes, np.empty_like(self.nodes)])
            self.parents = np.concatenate([self.parents, np.full(len(self.parents), -1, dtype=np.int64)])
        self.nodes[self.size] = q
        self.parents[self.size] = parent
        self.size += 1
        return self.size - 1

    def branch(self, index: int) -> npt.NDArray[np.float64]:
        """States from the root to ``index``."""
        chain = []
        while index >= 0:
            chain.append(self.nodes[index])
            index = int(self.parents[index])
        return np.array(chain[::-1])


class RRTConnectPlanner:
    """Bidirectional RRT planner alternating the roles of its two trees."""

    _TRAPPED, _ADVANCED, _REACHED = range(3)

    def __init__(self, arm: ArmModel, scene: Optional[CollisionScene] = None, config: Optional[PlannerConfig] = None):
        """Initialize the planner for one arm and scene."""
        self._arm: ArmModel = arm
        self._config: PlannerConfig = PlannerConfig() if config is None else config
        self._checker: CollisionChecker = CollisionChecker(arm, scene, self._config.clearance)
        self._sweep_radii: npt.NDArray[np.float64] = joint_sweep_radii(arm)
        self._weights: npt.NDArray[np.float64] = self._config.joint_weights(arm.dof)

    @property
    def checker(self) -> CollisionChecker:
        """Return the collision checker."""
        return self._checker

    @property
    def config(self) -> PlannerConfig:
        """Return the planner configuration."""
        return self._config

    def set_scene(self, scene: CollisionScene) -> "RRTConnectPlanner":
        """Replace the collision scene."""
        self._checker.set_scene(scene)
        return self

    def _states(self, a: npt.ArrayLike, b: npt.ArrayLike, resolution: float) -> npt.NDArray[np.float64]:
        return interpolate(a, b, resolution, self._sweep_radii, 2.0 * self._config.clearance)

    def _edge_is_free(self, a: npt.ArrayLike, b: npt.ArrayLike, resolution: float) -> bool:
        return not any(self._checker.collides(state) for state in self._states(a, b, resolution))

    def _distance(self, a: JointVector, b: JointVector) -> float:
        return float(np.linalg.norm((b - a) * self._weights))

    def _steer(self, source: JointVector, target: JointVector) -> JointVector:
        distance = self._distance(source, target)
        if distance <= self._config.step_size:
            return target
        return np.asarray(source + (target - source) * (self._config.step_size / distance))

    def _extend(self, tree: _Tree, target: JointVector) -> tuple[int, int]:
        nearest = tree.nearest(target)
        source = tree.nodes[nearest]
        new = self._steer(source, target)
        if not self._edge_is_free(source, new, self._config.resolution):
            return self._TRAPPED, nearest
        index = tree.add(new, nearest)
        return (self._REACHED if new is target else self._ADVANCED), index

    def _connect(self, tree: _Tree, target: JointVector) -> tuple[int, int]:
        while True:
            status, index = self._extend(tree, target)
            if status != self._ADVANCED:
                return status, index

    def plan(self, q_start: npt.ArrayLike, q_goal: npt.ArrayLike) -> Path:
        """Return a collision-free path from ``q_start`` to ``q_goal``.

        Raises
        ------
        StartInCollisionError, GoalInCollisionError
            If an endpoint is invalid.
        PlanningTimeoutError
            If the trees do not meet within the iteration budget.
        """
        start = self._arm.check(q_start).copy()
        goal = self._arm.check(q_goal).copy()
        resolution = self._config.resolution
        if self._checker.collides(start):
            raise StartInCollisionError()
        if self._checker.collides(goal):
            raise GoalInCollisionError()
        if np.array_equal(start, goal):
            return Path(start[None, :], resolution)
        if self._edge_is_free(start, goal, resolution):
            return Path(np.stack([start, goal]), resolution)

        rng = np.random.default_rng(self._config.rng_seed)
        capacity = min(self._config.max_iterations + 1, 1024)
        tree_a = _Tree(start, self._weights, capacity)
        tree_b = _Tree(goal, self._weights, capacity)
        lower, upper = self._arm.lower_limits, self._arm.upper_limits

        for iteration in range(self._config.max_iterations):
            if rng.random() < self._config.goal_bias:
                sample = tree_b.root
            else:
                sample = rng.uniform(lower, upper)
            status, index = self._extend(tree_a, sample)
            if status != self._TRAPPED:
                reached = tree_a.nodes[index].copy()
                connection, other = self._connect(tree_b, reached)
                if connection == self._REACHED:
                    branch_a = tree_a.branch(index)
                    branch_b = tree_b.branch(other)[::-1][1:]
                    waypoints = np.concatenate([branch_a, branch_b])
                    if not np.array_equal(waypoints[0], start):
                        waypoints = waypoints[::-1]
                    repeated = np.concatenate([[False], np.all(waypoints[1:] == waypoints[:-1], axis=1)])
                    waypoints = waypoints[~repeated]
                    logger.debug(
                        "RRT-Connect joined the trees after %d iterations (%d + %d nodes)",
                        iteration + 1,
                        tree_a.size,
                        tree_b.size,
                    )
                    return Path(waypoints, resolution)
            tree_a, tree_b = tree_b, tree_a

        raise PlanningTimeoutError(self._config.max_iterations)

    def shortcut(self, path: Path, attempts: Optional[int] = None, rng_seed: Optional[int] = None) -> Path:
        """Remove detours by joining random waypoint pairs with straight segments.

        A pair is joined only when the straight segment validates at the path's
        resolution, so the result is never longer than the input.
        """
        attempts = self._config.shortcut_attempts if attempts is None else attempts
        rng = np.random.default_rng(self._config.rng_seed if rng_seed is None else rng_seed)
        waypoints = list(path.waypoints)
        for _ in range(attempts):
            if len(waypoints) <= 2:
                break
            first = int(rng.integers(0, len(waypoints) - 2))
            second = int(rng.integers(first + 2, len(waypoints)))
            if self._edge_is_free(waypoints[first], waypoints[second], path.resolution):
                waypoints = waypoints[: first + 1] + waypoints[second:]
        return Path(np.array(waypoints), path.resolution)

    def densify(self, path: Path) -> npt.NDArray[np.float64]:
        """All states this planner validates along ``path``, waypoints included."""
        states = [path.waypoints[:1]]
        for a, b in zip(path.waypoints[:-1], path.waypoints[1:]):
            states.append(self._states(a, b, path.resolution))
        return np.concatenate(states)

    def validate(self, path: Path) -> bool:
        """Whether every state of ``path`` keeps the clearance and avoids self-collision."""
        return not any(self._checker.collides(state) for state in self.densify(path))


def plan_rrtc(
    arm: ArmModel,
    q_start: npt.ArrayLike,
    q_goal: npt.ArrayLike,
    scene: Optional[CollisionScene] = None,
    config: Optional[PlannerConfig] = None,
) -> Path:
    """Plan a collision-free path with RRT-Connect."""
    return RRTConnectPlanner(arm, scene, config).plan(q_start, q_goal)


def shortcut(
    path: Path,
    scene: Optional[CollisionScene],
    arm: ArmModel,
    attempts: int = 100,
    rng_seed: int = 0,
) -> Path:
    """Shorten ``path`` by random pairwise shortcutting."""
    return RRTConnectPlanner(arm, scene).shortcut(path, attempts, rng_seed)
