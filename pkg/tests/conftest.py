"""Shared fixtures."""

import numpy as np
import pytest

from leafgrasp.geometry import Transform, UnitQuat
from leafgrasp.kinematics import ArmModel, fk
from leafgrasp.scenegen import LeafSpec, Scene


@pytest.fixture
def reachable_scene() -> Scene:
    """A flat leaf placed where the default arm's gripper sits near home, seen head-on from half a meter."""
    arm = ArmModel.default()
    leaf_pose = fk(arm, arm.home_configuration + np.array([0.2, 0.1, -0.1, 0.1, 0.1, 0.2]))
    optical_axis = -leaf_pose.normal
    helper = np.array([0.0, 0.0, 1.0]) if abs(optical_axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    x_axis = np.cross(helper, optical_axis)
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(optical_axis, x_axis)
    camera_to_world = Transform(
        UnitQuat.from_matrix(np.column_stack([x_axis, y_axis, optical_axis])),
        leaf_pose.position + 0.5 * leaf_pose.normal,
    )
    return Scene(
        leaves=(LeafSpec(leaf_pose, length=0.08, width=0.04),),
        camera_pose=camera_to_world.inverse(),
        standoff=0.5,
        seed=0,
    )
