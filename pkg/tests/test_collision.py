"""Test the capsule and box distance queries and the collision scene."""

import numpy as np
import pytest

from leafgrasp.collision import (
    Box,
    CollisionChecker,
    CollisionScene,
    SelfCollisionMatrix,
    arm_capsules,
    box_from_corners,
    capsule_point_contact,
    collides,
    joint_sweep_radii,
    leaf_box,
    segment_box_distance,
    segment_segment_distance,
)
from leafgrasp.exceptions import ConfigurationError
from leafgrasp.geometry import Pose, UnitQuat
from leafgrasp.kinematics import ArmModel, DHLink, fk
from leafgrasp.perception import LeafCloud

ARM = ArmModel.default()


def brute_segment_box(start, end, center, rotation, half, samples: int = 20001) -> float:
    t = np.linspace(0.0, 1.0, samples)[:, None]
    local = (start + t * (end - start) - center) @ rotation
    return float(np.min(np.linalg.norm(np.maximum(np.abs(local) - half, 0.0), axis=1)))


def test_segment_box_examples():
    """Crossing, parallel and end-on segments."""
    identity = np.eye(3)
    half = np.array([0.5, 0.5, 0.5])
    crossing = segment_box_distance([-2.0, 0.0, 0.0], [2.0, 0.0, 0.0], np.zeros(3), identity, half)
    parallel = segment_box_distance([-2.0, 0.0, 1.5], [2.0, 0.0, 1.5], np.zeros(3), identity, half)
    end_on = segment_box_distance([3.0, 0.0, 0.0], [5.0, 0.0, 0.0], np.zeros(3), identity, half)
    corner = segment_box_distance([1.5, 1.5, 1.5], [1.5, 1.5, 1.5], np.zeros(3), identity, half)
    assert np.allclose([crossing[0], parallel[0], end_on[0], corner[0]], [0.0, 1.0, 2.5, np.sqrt(3.0)])


def test_segment_box_matches_dense_sampling():
    """Random segments against random oriented boxes agree with a dense sampling of the segment."""
    rng = np.random.default_rng(0)
    count = 200
    starts = rng.normal(size=(count, 3))
    ends = rng.normal(size=(count, 3))
    centers = rng.normal(scale=0.5, size=(count, 3))
    rotations = np.array([UnitQuat.from_array(rng.normal(size=4)).as_matrix() for _ in range(count)])
    half = rng.uniform(0.05, 0.6, size=(count, 3))

    exact = segment_box_distance(starts, ends, centers, rotations, half)
    for index in range(count):
        sampled = brute_segment_box(starts[index], ends[index], centers[index], rotations[index], half[index])
        step = np.linalg.norm(ends[index] - starts[index]) / 20000
        assert exact[index] <= sampled + 1e-12
        assert sampled - exact[index] <= step


def test_segment_segment_examples():
    """Parallel, crossing, skew and degenerate pairs."""
    distances = segment_segment_distance(
        [[0, 0, 0], [-1, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0]],
        [[1, 0, 0], [1, 0, 0], [1, 0, 0], [0, 0, 0], [0, 0, 0]],
        [[0, 1, 0], [0, -1, 0], [0.5, -1, 2], [3, 4, 0], [2, 0, 0]],
        [[1, 1, 0], [0, 1, 0], [0.5, 1, 2], [3, 4, 0], [3, 0, 0]],
    )
    assert np.allclose(distances, [1.0, 0.0, 2.0, 5.0, 2.0])


def test_segment_segment_matches_dense_sampling():
    """Random pairs agree with a grid over both segment parameters."""
    rng = np.random.default_rng(1)
    t = np.linspace(0.0, 1.0, 401)
    for _ in range(50):
        a0, a1, b0, b1 = rng.normal(size=(4, 3))
        exact = segment_segment_distance(a0, a1, b0, b1)[0]
        points_a = a0 + t[:, None] * (a1 - a0)
        points_b = b0 + t[:, None] * (b1 - b0)
        sampled = np.min(np.linalg.norm(points_a[:, None, :] - points_b[None, :, :], axis=2))
        assert exact <= sampled + 1e-12
        assert sampled - exact <= (np.linalg.norm(a1 - a0) + np.linalg.norm(b1 - b0)) / 400


def test_empty_scene_is_free():
    """Without obstacles the home configuration is collision free."""
    assert not collides(ARM, ARM.home_configuration, CollisionScene())


def test_box_on_gripper_collides():
    """A box around the gripper collides, unless it stands for the allowed target."""
    gripper = fk(ARM, ARM.home_configuration).position
    box = Box(Pose(gripper, UnitQuat.identity()), np.full(3, 0.1), leaf_id=4)
    scene = CollisionScene((box,))
    assert collides(ARM, ARM.home_configuration, scene)
    assert not collides(ARM, ARM.home_configuration, scene.with_allowed_target(4))
    assert collides(ARM, ARM.home_configuration, scene.with_allowed_target(5))


def test_separated_box_is_free():
    """A box well beyond the reach of every capsule does not collide."""
    scene = CollisionScene((box_from_corners([2.0, 2.0, 2.0], [2.5, 2.5, 2.5]),))
    assert not collides(ARM, ARM.home_configuration, scene)


def test_checker_counts_and_swaps_scenes():
    """The checker counts queries and keeps its self-collision matrix across scenes."""
    gripper = fk(ARM, ARM.home_configuration).position
    checker = CollisionChecker(ARM)
    assert not checker.collides(ARM.home_configuration)
    checker.set_scene(CollisionScene((Box(Pose(gripper, UnitQuat.identity()), np.full(3, 0.1)),)))
    assert checker.collides(ARM.home_configuration)
    assert checker.checks == 2


def test_self_collision_matrix_skips_neighbours():
    """No checked pair sits on the same or adjacent links, and home is free."""
    matrix = SelfCollisionMatrix(ARM)
    capsules = arm_capsules(ARM, ARM.home_configuration)
    for first, second in matrix.pairs:
        assert abs(int(capsules.links[first]) - int(capsules.links[second])) > 1
    assert not matrix.collides(capsules)


def test_leaf_box_covers_cloud():
    """The leaf box contains every cloud point and keeps a minimum thickness."""
    rng = np.random.default_rng(2)
    points = np.column_stack([rng.uniform(-0.04, 0.04, 100), rng.uniform(-0.02, 0.02, 100), np.full(100, 0.5)])
    pose = Pose(np.array([0.0, 0.0, 0.5]), UnitQuat.identity())
    box = leaf_box(LeafCloud(leaf_id=2, points=points, pixel_indices=np.arange(100)), pose)
    assert box.leaf_id == 2
    assert box.half_extents[2] >= 0.002
    local = box.pose.orientation.inverse().rotate(points - box.pose.position)
    assert np.all(np.abs(local) <= box.half_extents + 1e-12)
    assert box.contains(box.pose.position)


def test_scene_serialisation_and_validation():
    """Scenes round-trip through JSON and boxes need positive extents."""
    scene = CollisionScene((box_from_corners([0, 0, 0], [1, 1, 1], leaf_id=1),), allowed_target=1)
    restored = CollisionScene.from_dict(scene.to_dict())
    assert restored.allowed_target == 1
    assert np.allclose(restored.obstacles[0].half_extents, 0.5)
    assert restored.obstacles[0].leaf_id == 1
    with pytest.raises(ConfigurationError):
        box_from_corners([0, 0, 0], [1, 0, 1])


def test_clearance_widens_the_capsules():
    """A box 5 mm outside a capsule is free, but not under a 1 cm clearance."""
    arm = ArmModel(links=(DHLink(a=1.0, alpha=0.0, d=0.0, radius=0.03),))
    scene = CollisionScene((box_from_corners([0.4, 0.035, -0.1], [0.6, 0.1, 0.1]),))
    assert not collides(arm, [0.0], scene)
    assert collides(arm, [0.0], scene, clearance=0.01)
    assert CollisionChecker(arm, scene, clearance=0.01).clearance == 0.01
    with pytest.raises(ConfigurationError):
        CollisionChecker(arm, scene, clearance=-0.01)


def test_joint_sweep_radii_bound_capsule_motion():
    """No capsule end moves further than the sweep bound of a small joint step."""
    planar = ArmModel(links=(DHLink(a=0.5, alpha=0.0, d=0.0), DHLink(a=0.5, alpha=0.0, d=0.0)))
    assert np.allclose(joint_sweep_radii(planar), [1.0, 0.5])

    radii = joint_sweep_radii(ARM)
    assert np.isclose(radii[0], 1.05)
    assert np.all(np.diff(radii) <= 0.0)

    rng = np.random.default_rng(4)
    for _ in range(50):
        q = rng.uniform(ARM.lower_limits, ARM.upper_limits)
        step = rng.normal(0.0, 0.05, size=ARM.dof)
        before, after = arm_capsules(ARM, q), arm_capsules(ARM, q + step)
        moved = max(
            np.max(np.linalg.norm(after.starts - before.starts, axis=1)),
            np.max(np.linalg.norm(after.ends - before.ends, axis=1)),
        )
        assert moved <= radii @ np.abs(step) + 1e-12


def test_capsule_point_contact():
    """Points inside a capsule touch it, points beyond its radius do not."""
    arm = ArmModel(links=(DHLink(a=1.0, alpha=0.0, d=0.0, radius=0.03),))
    capsules = arm_capsules(arm, [0.0])
    assert capsule_point_contact(capsules, [[0.5, 0.02, 0.0], [2.0, 0.0, 0.0]])
    assert capsule_point_contact(capsules, [[1.02, 0.0, 0.0]])
    assert not capsule_point_contact(capsules, [[0.5, 0.0, 0.05], [-0.04, 0.0, 0.0]])
    assert not capsule_point_contact(capsules, np.empty((0, 3)))
