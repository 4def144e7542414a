"""Test synthetic leaf generation and rendering against their analytic geometry."""

import numpy as np
import pytest

from leafgrasp.exceptions import EmptyRenderError, InvalidParamsError
from leafgrasp.geometry import CameraIntrinsics, Pose, Transform, quat_from_basis
from leafgrasp.perception import backproject, mask_depth
from leafgrasp.scenegen import (
    LeafParameters,
    LeafSpec,
    NoiseModel,
    Scene,
    boundary_band,
    gen_batch,
    gen_leaf,
    render,
)

INTRINSICS = CameraIntrinsics.default()


def facing_leaf(center: list[float], length: float = 0.08, width: float = 0.04, curvature: float = 0.0) -> LeafSpec:
    """A leaf whose normal points back at a camera placed at the world origin."""
    orientation = quat_from_basis([1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0])
    return LeafSpec(Pose(np.array(center), orientation), length=length, width=width, curvature=curvature)


def camera_scene(*leaves: LeafSpec) -> Scene:
    return Scene(leaves=leaves, camera_pose=Transform.identity())


def test_gen_leaf_is_deterministic():
    """The same seed yields the same leaf."""
    params = LeafParameters(center=np.array([0.5, 0.0, 0.4]), curvature=3.0)
    assert gen_leaf(7, params).to_dict() == gen_leaf(7, params).to_dict()
    assert gen_leaf(7, params).to_dict() != gen_leaf(8, params).to_dict()


def test_planar_leaf_outline_and_normal():
    """A flat leaf stays inside its ellipse and shares the pose normal everywhere."""
    params = LeafParameters(center=np.array([0.5, 0.0, 0.4]), length=0.08, width=0.04)
    leaf = gen_leaf(3, params)
    local = leaf.gt_pose.as_transform().inverse().apply(leaf.sample_surface())
    assert np.all((2.0 * local[:, 0] / 0.08) ** 2 + (2.0 * local[:, 1] / 0.04) ** 2 <= 1.0 + 1e-9)
    assert np.allclose(local[:, 2], 0.0, atol=1e-12)
    assert np.allclose(leaf.local_normals(local[:, 1]), [0.0, 0.0, 1.0])
    assert np.dot(leaf.gt_pose.normal, params.facing) > np.cos(params.max_tilt) - 1e-9


def test_leaf_spec_validation():
    """Non-positive sizes and excessive curvature are rejected."""
    with pytest.raises(InvalidParamsError):
        facing_leaf([0.0, 0.0, 0.5], length=0.0)
    with pytest.raises(InvalidParamsError):
        facing_leaf([0.0, 0.0, 0.5], length=0.1, curvature=40.0)


def test_gen_batch_determinism_and_validation():
    """Scenes are reproducible from their seed and reject impossible parameters."""
    assert gen_batch(42, 3, 0.2).to_dict() == gen_batch(42, 3, 0.2).to_dict()
    with pytest.raises(InvalidParamsError):
        gen_batch(0, 0)
    with pytest.raises(InvalidParamsError):
        gen_batch(0, 2, occlusion_level=1.5)
    with pytest.raises(InvalidParamsError):
        gen_batch(0, 2, standoff=0.1)


def test_scene_serialisation():
    """Scenes survive a trip through their JSON representation."""
    scene = gen_batch(5, 2, 0.5, noise_preset="lab")
    restored = Scene.from_dict(scene.to_dict())
    assert restored.seed == 5
    assert restored.noise_preset == "lab"
    assert restored.camera_pose.isclose(scene.camera_pose)
    for leaf, original in zip(restored.leaves, scene.leaves):
        assert leaf.gt_pose.isclose(original.gt_pose)
        assert (leaf.length, leaf.width, leaf.curvature, leaf.pigment) == (
            original.length,
            original.width,
            original.curvature,
            original.pigment,
        )


def test_single_leaf_is_fully_visible():
    """One unoccluded leaf owns a non-empty mask and its ground truth world pose round-trips."""
    scene = gen_batch(1, 1)
    _, masks, ground_truth = render(scene, INTRINSICS)
    assert len(masks) == 1
    assert masks[0].bits.sum() == ground_truth[0].pixel_count > 0
    assert ground_truth[0].world_pose.isclose(scene.leaves[0].gt_pose, atol=1e-9)
    assert np.dot(ground_truth[0].normal, -ground_truth[0].center) > 0.0


def test_unoccluded_masks_are_disjoint():
    """Three unoccluded leaves never share a pixel."""
    for seed in range(5):
        _, masks, _ = render(gen_batch(seed, 3), INTRINSICS)
        assert all(mask.bits.any() for mask in masks)
        for i in range(3):
            for j in range(i + 1, 3):
                assert not np.any(masks[i].bits & masks[j].bits)


def test_planar_render_lies_on_plane():
    """Noiseless depth of a flat leaf back-projects onto the analytic plane."""
    scene = camera_scene(facing_leaf([0.02, -0.01, 0.5]))
    observation, masks, _ = render(scene, INTRINSICS)
    cloud = backproject(mask_depth(observation.depth, masks[0]), INTRINSICS)
    assert np.allclose(cloud.points[:, 2], 0.5, atol=1e-6)


def test_curved_render_lies_on_cylinder():
    """Noiseless depth of a bent leaf back-projects onto its cylinder."""
    curvature = 5.0
    leaf = facing_leaf([0.0, 0.0, 0.45], length=0.1, width=0.05, curvature=curvature)
    observation, masks, _ = render(camera_scene(leaf), INTRINSICS)
    cloud = backproject(mask_depth(observation.depth, masks[0]), INTRINSICS)
    local = leaf.gt_pose.as_transform().inverse().apply(cloud.points)
    residual = curvature * (local[:, 1] ** 2 + local[:, 2] ** 2) - 2.0 * local[:, 2]
    assert np.allclose(residual, 0.0, atol=1e-6)


def test_boundary_dropout_clears_band():
    """With dropout certain, no depth survives within the band of a mask edge."""
    scene = camera_scene(facing_leaf([0.0, 0.0, 0.5]))
    noise = NoiseModel(boundary_dropout_px=2, dropout_rate=1.0)
    observation, masks, _ = render(scene, INTRINSICS, noise)
    band = boundary_band(masks[0].bits, 2)
    assert band.any()
    assert not np.any(observation.depth.values[band])
    assert np.all(observation.depth.values[masks[0].bits & ~band] > 0.0)


def test_noisy_render_is_reproducible():
    """The render seed fixes the noise."""
    scene = gen_batch(9, 2, noise_preset="field")
    first, _, _ = render(scene, INTRINSICS, NoiseModel.preset("field"))
    second, _, _ = render(scene, INTRINSICS, NoiseModel.preset("field"))
    third, _, _ = render(scene, INTRINSICS, NoiseModel.preset("field"), rng_seed=10)
    assert np.array_equal(first.depth.values, second.depth.values)
    assert not np.array_equal(first.depth.values, third.depth.values)


def test_occluded_leaf_loses_pixels_to_nearer_leaf():
    """Each pixel belongs to the nearest surface."""
    near = facing_leaf([0.0, 0.0, 0.5])
    far = facing_leaf([0.02, 0.0, 0.6], length=0.2, width=0.1)
    observation, masks, _ = render(camera_scene(near, far), INTRINSICS)
    _, alone, _ = render(camera_scene(far), INTRINSICS)

    assert not np.any(masks[0].bits & masks[1].bits)
    assert masks[1].bits.sum() < alone[0].bits.sum()
    assert np.all(alone[0].bits[masks[0].bits])
    assert np.allclose(observation.depth.values[masks[0].bits], 0.5)
    assert np.allclose(observation.depth.values[masks[1].bits], 0.6)


def test_empty_render():
    """A leaf behind the camera leaves nothing to see."""
    with pytest.raises(EmptyRenderError):
        render(camera_scene(facing_leaf([0.0, 0.0, -0.5])), INTRINSICS)


def test_noise_presets():
    """Presets exist by name and validate their parameters."""
    assert NoiseModel.preset("none").is_noiseless
    assert not NoiseModel.preset("lab").is_noiseless
    assert NoiseModel.preset("field").depth_sigma > NoiseModel.preset("lab").depth_sigma
    assert NoiseModel.preset("none").sway_sigma == 0.0
    assert NoiseModel.preset("field").sway_sigma > NoiseModel.preset("lab").sway_sigma > 0.0
    assert NoiseModel.from_dict(NoiseModel.preset("lab").to_dict()) == NoiseModel.preset("lab")
    assert NoiseModel.from_dict({"depth_sigma": 0.002}).sway_sigma == 0.0
    with pytest.raises(InvalidParamsError):
        NoiseModel.preset("storm")
    with pytest.raises(InvalidParamsError):
        NoiseModel(dropout_rate=2.0)
    with pytest.raises(InvalidParamsError):
        NoiseModel(sway_sigma=-0.001)
