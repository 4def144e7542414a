"""Denavit-Hartenberg serial chains: forward kinematics, Jacobian and numerical IK."""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Optional

import numpy as np
import numpy.typing as npt
from scipy.spatial.transform import Rotation

from leafgrasp.exceptions import ConfigurationError, LengthMismatchError, NoSolutionError
from leafgrasp.geometry import Pose, Transform, UnitQuat

logger = logging.getLogger(__name__)

JointVector = npt.NDArray[np.float64]

DEFAULT_DAMPING: float = 0.05
DEFAULT_RESTARTS: int = 40
MIN_DAMPING: float = 1e-4
MAX_DAMPING: float = 10.0
DAMPING_DECREASE: float = 0.5
DAMPING_INCREASE: float = 4.0
STALL_ITERATIONS: int = 10
STALL_RATIO: float = 0.98


@dataclass(frozen=True)
class DHLink:
    """One standard DH row: ``Rz(theta) Tz(d) Tx(a) Rx(alpha)``."""

    a: float
    alpha: float
    d: float
    theta_offset: float = 0.0
    joint_min: float = -np.pi
    joint_max: float = np.pi
    radius: float = 0.04

    def __post_init__(self) -> None:
        if not self.joint_min < self.joint_max:
            raise ConfigurationError(f"joint_min {self.joint_min} must be below joint_max {self.joint_max}")
        if not self.radius > 0.0:
            raise ConfigurationError(f"link radius must be positive, got {self.radius}")

    def matrix(self, angle: float) -> npt.NDArray[np.float64]:
        """Homogeneous transform of this link at joint angle ``angle``."""
        theta = angle + self.theta_offset
        ct, st = np.cos(theta), np.sin(theta)
        ca, sa = np.cos(self.alpha), np.sin(self.alpha)
        return np.array(
            [
                [ct, -st * ca, st * sa, self.a * ct],
                [st, ct * ca, -ct * sa, self.a * st],
                [0.0, sa, ca, self.d],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )

    def to_dict(self) -> dict[str, float]:
        """Return the JSON representation."""
        return {
            "a": self.a,
            "alpha": self.alpha,
            "d": self.d,
            "theta_offset": self.theta_offset,
            "joint_min": self.joint_min,
            "joint_max": self.joint_max,
            "radius": self.radius,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DHLink":
        """Create a link from its JSON representation."""
        return cls(
            a=float(data["a"]),
            alpha=float(data["alpha"]),
            d=float(data["d"]),
            theta_offset=float(data.get("theta_offset", 0.0)),
            joint_min=float(data.get("joint_min", -np.pi)),
            joint_max=float(data.get("joint_max", np.pi)),
            radius=float(data.get("radius", 0.04)),
        )


@dataclass(frozen=True, eq=False)
class ArmModel:
    """A serial arm: DH links between ``base_pose`` and the gripper frame.

    ``tool_offset`` maps the gripper frame into the last link frame. ``home`` is the
    configuration the arm starts from and returns to between targets.
    """

    links: tuple[DHLink, ...]
    base_pose: Transform = field(default_factory=Transform.identity)
    tool_offset: Transform = field(default_factory=Transform.identity)
    home: Optional[JointVector] = None
    name: str = "arm"

    def __post_init__(self) -> None:
        object.__setattr__(self, "links", tuple(self.links))
        if len(self.links) == 0:
            raise ConfigurationError("an arm needs at least one link")
        home = np.zeros(len(self.links)) if self.home is None else np.array(self.home, dtype=np.float64)
        if home.shape != (len(self.links),):
            raise LengthMismatchError(len(self.links), int(home.size))
        home.setflags(write=False)
        object.__setattr__(self, "home", home)

    @property
    def dof(self) -> int:
        """Number of joints."""
        return len(self.links)

    @property
    def home_configuration(self) -> JointVector:
        """The home joint vector."""
        assert self.home is not None
        return self.home

    @cached_property
    def lower_limits(self) -> JointVector:
        """Lower joint limits."""
        return np.array([link.joint_min for link in self.links])

    @cached_property
    def upper_limits(self) -> JointVector:
        """Upper joint limits."""
        return np.array([link.joint_max for link in self.links])

    @property
    def reach(self) -> float:
        """Upper bound of the distance from the first joint axis to the gripper."""
        return float(
            sum(np.hypot(link.a, link.d) for link in self.links[1:])
            + abs(self.links[0].a)
            + np.linalg.norm(self.tool_offset.translation)
        )

    def within_limits(self, q: npt.ArrayLike) -> bool:
        """Whether every joint lies within its limits."""
        q = self.check(q)
        return bool(np.all(q >= self.lower_limits) and np.all(q <= self.upper_limits))

    def clamp(self, q: npt.ArrayLike) -> JointVector:
        """Clamp a joint vector into the limits."""
        return np.clip(self.check(q), self.lower_limits, self.upper_limits)

    @cached_property
    def continuous_joints(self) -> npt.NDArray[np.bool_]:
        """Joints whose range spans a full turn."""
        return np.asarray(self.upper_limits - self.lower_limits >= 2.0 * np.pi - 1e-9)

    def wrap(self, q: npt.ArrayLike) -> JointVector:
        """Bring a joint vector into the limits, turning full-range joints by whole turns.

        Joints with a narrower range are clamped.
        """
        q = self.check(q)
        lower = self.lower_limits
        wrapped = np.where(self.continuous_joints, lower + np.mod(q - lower, 2.0 * np.pi), q)
        return np.clip(wrapped, lower, self.upper_limits)

    def check(self, q: npt.ArrayLike) -> JointVector:
        """Return ``q`` as a float array, raising when its length is wrong."""
        array = np.asarray(q, dtype=np.float64).ravel()
        if array.size != self.dof:
            raise LengthMismatchError(self.dof, int(array.size))
        return array

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON representation of the arm description file."""
        return {
            "name": self.name,
            "links": [link.to_dict() for link in self.links],
            "base_pose": self.base_pose.to_dict(),
            "tool_offset": self.tool_offset.to_dict(),
            "home": [float(v) for v in self.home_configuration],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ArmModel":
        """Create an arm from its description file."""
        return cls(
            links=tuple(DHLink.from_dict(link) for link in data["links"]),
            base_pose=Transform.from_dict(data["base_pose"]) if "base_pose" in data else Transform.identity(),
            tool_offset=Transform.from_dict(data["tool_offset"]) if "tool_offset" in data else Transform.identity(),
            home=None if data.get("home") is None else np.asarray(data["home"], dtype=np.float64),
            name=str(data.get("name", "arm")),
        )

    @classmethod
    def default(cls) -> "ArmModel":
        """A six-joint arm of 0.9 m reach, shaped like common collaborative arms.

        The dimensions are representative, not those of a specific product. The
        gripper frame is the flange frame turned half a turn about x, so the gripper
        z axis points back out of the flange: aligning it with a leaf normal that
        faces the camera makes the flange push into the leaf from the camera side.
        """
        half_pi = np.pi / 2
        links = (
            DHLink(a=0.0, alpha=half_pi, d=0.15, radius=0.05),
            DHLink(a=-0.36, alpha=0.0, d=0.0, radius=0.045),
            DHLink(a=-0.31, alpha=0.0, d=0.0, radius=0.04),
            DHLink(a=0.0, alpha=half_pi, d=0.10, radius=0.035),
            DHLink(a=0.0, alpha=-half_pi, d=0.07, radius=0.035),
            DHLink(a=0.0, alpha=0.0, d=0.06, radius=0.03),
        )
        return cls(
            links=links,
            tool_offset=Transform(UnitQuat.from_axis_angle([1.0, 0.0, 0.0], np.pi), np.zeros(3)),
            home=np.array([0.0, -np.pi / 4, half_pi, 0.0, half_pi, 0.0]),
            name="default-6dof",
        )


def link_frames(arm: ArmModel, q: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Return the ``(dof + 1, 4, 4)`` stack of frames from the base to the last link."""
    q = arm.check(q)
    frames = np.empty((arm.dof + 1, 4, 4))
    frames[0] = arm.base_pose.as_matrix()
    for index, (link, angle) in enumerate(zip(arm.links, q)):
        frames[index + 1] = frames[index] @ link.matrix(float(angle))
    return frames


def _tool_matrix(arm: ArmModel, frames: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    return frames[-1] @ arm.tool_offset.as_matrix()


def fk(arm: ArmModel, q: npt.ArrayLike) -> Pose:
    """Pose of the gripper frame in the base frame."""
    return Pose.from_transform(Transform.from_matrix(_tool_matrix(arm, link_frames(arm, q))))


def _geometric_jacobian(arm: ArmModel, frames: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    tool = _tool_matrix(arm, frames)[:3, 3]
    axes = frames[:-1, :3, 2]
    origins = frames[:-1, :3, 3]
    jacobian = np.empty((6, arm.dof))
    jacobian[:3] = np.cross(axes, tool - origins).T
    jacobian[3:] = axes.T
    return jacobian


def jacobian(arm: ArmModel, q: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Geometric Jacobian of the gripper frame, linear rows first."""
    return _geometric_jacobian(arm, link_frames(arm, q))


def numerical_jacobian(arm: ArmModel, q: npt.ArrayLike, step: float = 1e-6) -> npt.NDArray[np.float64]:
    """Central finite-difference Jacobian, comparable to :func:`jacobian`.

    The angular rows come from the rotation vector of ``R(q + h) R(q - h)^T``.
    """
    q = arm.check(q)
    columns = []
    for index in range(arm.dof):
        offset = np.zeros(arm.dof)
        offset[index] = step
        forward = _tool_matrix(arm, link_frames(arm, q + offset))
        backward = _tool_matrix(arm, link_frames(arm, q - offset))
        linear = (forward[:3, 3] - backward[:3, 3]) / (2.0 * step)
        angular = Rotation.from_matrix(forward[:3, :3] @ backward[:3, :3].T).as_rotvec() / (2.0 * step)
        columns.append(np.concatenate([linear, angular]))
    return np.column_stack(columns)


def pose_error(current: npt.NDArray[np.float64], target: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """Six-vector from a current to a target homogeneous pose.

    The rotational part is the quaternion logarithm of ``R_target R_current^T``,
    expressed in the base frame like the Jacobian's angular rows.
    """
    error = np.empty(6)
    error[:3] = target[:3, 3] - current[:3, 3]
    error[3:] = Rotation.from_matrix(target[:3, :3] @ current[:3, :3].T).as_rotvec()
    return error


class IKConfiguration:
    """Class to encapsulate the parameters of the damped least-squares solver."""

    def __init__(self) -> None:
        """Initialize the solver parameters with their defaults."""
        self._tol_pos: float = 1e-4
        self._tol_rot: float = 1e-3
        self._max_iter: int = 200
        self._damping: float = DEFAULT_DAMPING
        self._restarts: int = DEFAULT_RESTARTS
        self._max_step: float = 0.5
        self._rng_seed: int = 0

    @property
    def tol_pos(self) -> float:
        """Position tolerance in meters."""
        return self._tol_pos

    @property
    def tol_rot(self) -> float:
        """Rotation tolerance in radians."""
        return self._tol_rot

    @property
    def max_iter(self) -> int:
        """Iterations per attempt."""
        return self._max_iter

    @property
    def damping(self) -> float:
        """Initial damping factor lambda; each attempt adapts it."""
        return self._damping

    @property
    def restarts(self) -> int:
        """Random restarts after the seeded attempt."""
        return self._restarts

    @property
    def max_step(self) -> float:
        """Largest joint change per iteration, radians."""
        return self._max_step

    @property
    def rng_seed(self) -> int:
        """Seed of the restart generator."""
        return self._rng_seed

    def set_tolerances(self, tol_pos: float, tol_rot: float) -> "IKConfiguration":
        """Set the position and rotation tolerances."""
        if not (tol_pos > 0.0 and tol_rot > 0.0):
            raise ConfigurationError(f"IK tolerances must be positive, got {tol_pos} m and {tol_rot} rad")
        self._tol_pos = tol_pos
        self._tol_rot = tol_rot
        return self

    def set_max_iter(self, max_iter: int) -> "IKConfiguration":
        """Set the iteration budget of each attempt."""
        if max_iter < 1:
            raise ConfigurationError(f"max_iter must be at least 1, got {max_iter}")
        self._max_iter = max_iter
        return self

    def set_damping(self, damping: float) -> "IKConfiguration":
        """Set the damping factor."""
        if not damping >= 0.0:
            raise ConfigurationError(f"damping must be non-negative, got {damping}")
        self._damping = damping
        return self

    def set_restarts(self, restarts: int) -> "IKConfiguration":
        """Set the number of random restarts."""
        if restarts < 0:
            raise ConfigurationError(f"restarts must be non-negative, got {restarts}")
        self._restarts = restarts
        return self

    def set_max_step(self, max_step: float) -> "IKConfiguration":
        """Set the per-iteration step clamp."""
        if not max_step > 0.0:
            raise ConfigurationError(f"max_step must be positive, got {max_step}")
        self._max_step = max_step
        return self

    def set_rng_seed(self, rng_seed: int) -> "IKConfiguration":
        """Set the seed of the restart generator."""
        self._rng_seed = int(rng_seed)
        return self

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON representation."""
        return {
            "tol_pos": self._tol_pos,
            "tol_rot": self._tol_rot,
            "max_iter": self._max_iter,
            "damping": self._damping,
            "restarts": self._restarts,
            "max_step": self._max_step,
            "rng_seed": self._rng_seed,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "IKConfiguration":
        """Create a configuration from its JSON representation."""
        return (
            cls()
            .set_tolerances(float(data.get("tol_pos", 1e-4)), float(data.get("tol_rot", 1e-3)))
            .set_max_iter(int(data.get("max_iter", 200)))
            .set_damping(float(data.get("damping", DEFAULT_DAMPING)))
            .set_restarts(int(data.get("restarts", DEFAULT_RESTARTS)))
            .set_max_step(float(data.get("max_step", 0.5)))
            .set_rng_seed(int(data.get("rng_seed", 0)))
        )


def _converged(error: npt.NDArray[np.float64], configuration: IKConfiguration) -> bool:
    position_error, rotation_error = np.linalg.norm(error[:3]), np.linalg.norm(error[3:])
    return bool(position_error <= configuration.tol_pos and rotation_error <= configuration.tol_rot)


def _descend(
    arm: ArmModel, target: npt.NDArray[np.float64], q: JointVector, configuration: IKConfiguration
) -> tuple[JointVector, float, float]:
    """Run one damped least-squares attempt; return the best state and its errors.

    The damping adapts like Levenberg-Marquardt: a step that lowers the squared
    error is taken and the damping halved, any other step is refused and the
    damping raised. The attempt gives up once the error stops falling.
    """
    damping = max(configuration.damping, MIN_DAMPING)
    frames = link_frames(arm, q)
    error = pose_error(_tool_matrix(arm, frames), target)
    cost = float(error @ error)
    reference, stalled = cost, 0
    for _ in range(configuration.max_iter):
        if _converged(error, configuration):
            break
        jac = _geometric_jacobian(arm, frames)
        step = jac.T @ np.linalg.solve(jac @ jac.T + damping**2 * np.eye(6), error)
        largest = float(np.max(np.abs(step)))
        if largest > configuration.max_step:
            step *= configuration.max_step / largest
        candidate = arm.wrap(q + step)
        candidate_frames = link_frames(arm, candidate)
        candidate_error = pose_error(_tool_matrix(arm, candidate_frames), target)
        candidate_cost = float(candidate_error @ candidate_error)
        if candidate_cost < cost:
            q, frames, error, cost = candidate, candidate_frames, candidate_error, candidate_cost
            damping = max(damping * DAMPING_DECREASE, MIN_DAMPING)
        else:
            damping *= DAMPING_INCREASE
            if damping > MAX_DAMPING:
                break
        if cost < STALL_RATIO * reference:
            reference, stalled = cost, 0
        else:
            stalled += 1
            if stalled >= STALL_ITERATIONS:
                break
    return q, float(np.linalg.norm(error[:3])), float(np.linalg.norm(error[3:]))


def solve_ik(
    arm: ArmModel,
    target: Pose,
    seed: npt.ArrayLike,
    configuration: Optional[IKConfiguration] = None,
) -> JointVector:
    """Find joint angles placing the gripper frame at ``target``.

    Parameters
    ----------
    arm : ArmModel
        The arm to solve for.
    target : Pose
        Desired gripper pose in the base frame.
    seed : array-like
        Initial joint vector of the first attempt.
    configuration : IKConfiguration, optional
        Tolerances, damping and restart budget.

    Raises
    ------
    NoSolutionError
        If neither the seeded attempt nor any random restart converges.
    LengthMismatchError
        If the seed does not have one entry per joint.
    """
    configuration = IKConfiguration() if configuration is None else configuration
    target_matrix = target.as_transform().as_matrix()
    q = arm.clamp(seed)
    rng = np.random.default_rng(configuration.rng_seed)

    best_position, best_rotation = np.inf, np.inf
    for attempt in range(configuration.restarts + 1):
        if attempt > 0:
            q = rng.uniform(arm.lower_limits, arm.upper_limits)
        solution, position_error, rotation_error = _descend(arm, target_matrix, q, configuration)
        if position_error <= configuration.tol_pos and rotation_error <= configuration.tol_rot:
            logger.debug("IK converged on attempt %d", attempt + 1)
            return solution
        if position_error + rotation_error < best_position + best_rotation:
            best_position, best_rotation = position_error, rotation_error

    raise NoSolutionError(configuration.restarts + 1, best_position, best_rotation)
