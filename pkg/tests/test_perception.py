"""Test the perception pipeline from masked depth to ranked pose sets."""

import numpy as np
import pytest

from leafgrasp.exceptions import (
    DegenerateCloudError,
    DegenerateTangentError,
    DimensionMismatchError,
    EmptyCloudError,
)
from leafgrasp.geometry import CameraIntrinsics, UnitQuat
from leafgrasp.perception import (
    ALPHA_SCHEDULE,
    BinaryMask,
    DepthMap,
    LeafCloud,
    Observation,
    PerceptionPipeline,
    backproject,
    candidate_poses,
    central_index,
    central_point,
    estimate_normal,
    filter_outliers,
    leaf_frame,
    mask_depth,
    perceive,
)
from leafgrasp.scenegen import gen_batch, render

SMALL = CameraIntrinsics(fx=100.0, fy=100.0, cx=2.0, cy=2.0, width=5, height=5)


def make_cloud(points: np.ndarray, leaf_id: int = 0) -> LeafCloud:
    return LeafCloud(leaf_id=leaf_id, points=points, pixel_indices=np.arange(len(points)))


def plane_points(rng: np.random.Generator, normal: np.ndarray, offset: np.ndarray, count: int = 200) -> np.ndarray:
    normal = normal / np.linalg.norm(normal)
    helper = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(normal, helper)
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    coefficients = rng.uniform(-0.05, 0.05, size=(count, 2))
    return offset + coefficients[:, :1] * u + coefficients[:, 1:] * v


def test_mask_depth():
    """All-true, all-false and checkerboard masks."""
    depth = DepthMap(np.ones((4, 4)))
    assert np.array_equal(mask_depth(depth, BinaryMask(np.ones((4, 4), dtype=bool))).values, depth.values)
    assert not np.any(mask_depth(depth, BinaryMask(np.zeros((4, 4), dtype=bool))).values)

    checkerboard = (np.indices((4, 4)).sum(axis=0) % 2).astype(bool)
    masked = mask_depth(depth, BinaryMask(checkerboard))
    assert np.array_equal(masked.values, checkerboard.astype(float))
    assert np.array_equal(mask_depth(masked, BinaryMask(checkerboard)).values, masked.values)

    with pytest.raises(DimensionMismatchError):
        mask_depth(depth, BinaryMask(np.ones((3, 4), dtype=bool)))


def test_depth_map_clamps_negative_values():
    """Negative depth carries no measurement and is stored as 0."""
    assert np.array_equal(DepthMap(np.array([[-1.0, 2.0]])).values, [[0.0, 2.0]])


def test_backproject_principal_and_focal_rays():
    """The principal ray and a one-focal-length offset land where expected."""
    values = np.zeros((5, 5))
    values[2, 2] = 2.0
    cloud = backproject(DepthMap(values), SMALL)
    assert np.allclose(cloud.points, [[0.0, 0.0, 2.0]])

    wide = CameraIntrinsics(fx=2.0, fy=2.0, cx=1.0, cy=1.0, width=4, height=3)
    values = np.zeros((3, 4))
    values[1, 3] = 1.0
    assert np.allclose(backproject(DepthMap(values), wide).points, [[1.0, 0.0, 1.0]])

    with pytest.raises(EmptyCloudError):
        backproject(DepthMap(np.zeros((5, 5))), SMALL)


def test_backproject_projection_round_trip():
    """Projecting every back-projected point recovers its pixel and depth."""
    rng = np.random.default_rng(0)
    values = rng.uniform(0.3, 1.5, size=(5, 5))
    values[rng.random((5, 5)) < 0.3] = 0.0
    cloud = backproject(DepthMap(values), SMALL)
    projected = SMALL.project(cloud.points)
    rows, columns = np.divmod(cloud.pixel_indices, 5)
    assert np.allclose(projected[:, 0], columns, atol=0.5)
    assert np.allclose(projected[:, 1], rows, atol=0.5)
    assert np.allclose(projected[:, 2], values[rows, columns])


def test_filter_outliers_removes_injected_outlier():
    """A point five standard deviations out on every axis is always removed."""
    rng = np.random.default_rng(1)
    for _ in range(100):
        points = rng.normal(0.0, 0.01, size=(100, 3)) + [0.0, 0.0, 1.0]
        outlier = points.mean(axis=0) + 5.0 * points.std(axis=0)
        cloud = make_cloud(np.vstack([points, outlier]))
        filtered = filter_outliers(cloud)
        assert filtered.filtered
        assert len(filtered) < len(cloud)
        assert not np.any(np.all(filtered.points == outlier, axis=1))

        z_scores = (filtered.points - cloud.points.mean(axis=0)) / cloud.points.std(axis=0)
        assert np.all(np.abs(z_scores) <= 2.33)
        assert set(filtered.pixel_indices.tolist()) <= set(cloud.pixel_indices.tolist())


def test_filter_outliers_hand_computed():
    """A single far point on a thin slab is flagged by its z-score."""
    rng = np.random.default_rng(2)
    points = np.column_stack([rng.uniform(-1, 1, 100), rng.uniform(-1, 1, 100), 1.0 + rng.normal(0, 1e-3, 100)])
    cloud = make_cloud(np.vstack([points, [0.0, 0.0, 5.0]]))
    filtered = filter_outliers(cloud)
    assert np.max(filtered.points[:, 2]) < 2.0


def test_filter_outliers_degenerate_inputs():
    """Tight, identical and tiny clouds keep every point and are still marked as filtered."""
    tight = make_cloud(np.array([[0.0, 0.0, 1.0], [0.01, 0.0, 1.0], [0.0, 0.01, 1.0], [0.01, 0.01, 1.0]]))
    assert len(filter_outliers(tight)) == 4

    identical = make_cloud(np.tile([0.1, 0.2, 0.3], (10, 1)))
    assert len(filter_outliers(identical)) == 10
    assert filter_outliers(identical).filtered

    tiny = make_cloud(np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 9.0], [5.0, 0.0, 1.0]]))
    kept = filter_outliers(tiny)
    assert kept.filtered
    assert not tiny.filtered
    assert np.array_equal(kept.points, tiny.points)
    assert np.array_equal(kept.pixel_indices, tiny.pixel_indices)

    single = filter_outliers(make_cloud(np.array([[0.0, 0.0, 1.0]])))
    assert single.filtered and len(single) == 1


def test_central_point_examples():
    """Single point and symmetric grid."""
    assert np.allclose(central_point(make_cloud(np.array([[1.0, 2.0, 3.0]]))), [1.0, 2.0, 3.0])
    grid = np.array([[x, y, 1.0] for x in (-1, 0, 1) for y in (-1, 0, 1)], dtype=float)
    assert np.allclose(central_point(make_cloud(grid)), [0.0, 0.0, 1.0])


def test_central_point_matches_brute_force():
    """Random clouds of many sizes agree with an exhaustive search for the median-closest point."""
    rng = np.random.default_rng(3)
    for _ in range(200):
        points = rng.normal(size=(int(rng.integers(10, 2000)), 3))
        median = np.median(points, axis=0)
        expected = min(range(len(points)), key=lambda i: (float(np.sum((points[i] - median) ** 2)), i))
        assert central_index(make_cloud(points)) == expected


def test_estimate_normal_planes():
    """Analytic planes, with the sign pointed at the viewpoint."""
    rng = np.random.default_rng(4)
    horizontal = plane_points(rng, np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, 0.5]))
    assert np.allclose(estimate_normal(make_cloud(horizontal), np.zeros(3)), [0.0, 0.0, -1.0], atol=1e-9)

    tilted = plane_points(rng, np.array([1.0, 0.0, 1.0]), np.array([0.5, 0.0, 0.5]))
    normal = estimate_normal(make_cloud(tilted), np.zeros(3))
    assert np.allclose(normal, -np.array([1.0, 0.0, 1.0]) / np.sqrt(2.0), atol=1e-6)


def test_estimate_normal_with_noise_and_viewpoint_rule():
    """One millimeter of noise keeps the normal within a degree, always facing the sensor."""
    rng = np.random.default_rng(5)
    within = 0
    for _ in range(200):
        analytic = rng.normal(size=3)
        analytic[2] = -abs(analytic[2]) - 1.0
        analytic /= np.linalg.norm(analytic)
        center = np.array([0.0, 0.0, 0.5])
        points = plane_points(rng, analytic, center) + rng.normal(0.0, 1e-3, size=(200, 3))
        normal = estimate_normal(make_cloud(points), np.zeros(3), center)
        assert np.dot(normal, -center) > 0.0
        within += np.degrees(np.arccos(np.clip(np.dot(normal, analytic), -1.0, 1.0))) < 1.0
    assert within >= 190


def test_estimate_normal_degenerate():
    """Collinear points have no plane."""
    line = np.column_stack([np.linspace(0, 1, 10), np.zeros(10), np.ones(10)])
    with pytest.raises(DegenerateCloudError):
        estimate_normal(make_cloud(line))
    with pytest.raises(DegenerateCloudError):
        estimate_normal(make_cloud(np.array([[0.0, 0.0, 1.0]])))


def test_leaf_frame_example():
    """The uppermost point of a planar leaf gives the tangent."""
    points = np.array([[0.0, -0.05, 1.0], [0.0, 0.0, 1.0], [0.03, 0.02, 1.0], [-0.03, 0.02, 1.0]])
    frame = leaf_frame(make_cloud(points), [0.0, 0.0, 1.0], [0.0, 0.0, -1.0])
    assert np.allclose(frame.tangent, [0.0, -1.0, 0.0])
    assert np.allclose(frame.bitangent, np.cross(frame.normal, frame.tangent))
    assert np.allclose(frame.reference_point, [0.0, -0.05, 1.0])


def test_leaf_frame_orthonormal_and_degenerate():
    """Random planar clouds give orthonormal frames; an edge along n has no tangent."""
    rng = np.random.default_rng(6)
    for _ in range(50):
        points = plane_points(rng, rng.normal(size=3), np.array([0.0, 0.0, 0.6]))
        cloud = make_cloud(points)
        center = central_point(cloud)
        frame = leaf_frame(cloud, center, estimate_normal(cloud, center=center))
        basis = frame.as_matrix()
        assert np.allclose(basis.T @ basis, np.eye(3), atol=1e-9)

    points = np.array([[0.0, -0.1, 1.0], [0.0, 0.0, 1.0], [0.1, 0.1, 1.0]])
    with pytest.raises(DegenerateTangentError):
        leaf_frame(make_cloud(points), [0.0, 0.0, 1.0], [0.0, -1.0, 0.0])


def test_candidate_pose_schedule():
    """Poses two to five are pure rotations of pose one about n by the alpha schedule."""
    rng = np.random.default_rng(7)
    for _ in range(100):
        points = plane_points(rng, rng.normal(size=3), np.array([0.0, 0.0, 0.6]))
        cloud = make_cloud(points)
        center = central_point(cloud)
        poseset = candidate_poses(leaf_frame(cloud, center, estimate_normal(cloud, center=center)))
        assert len(poseset.poses) == 5
        first = poseset.poses[0]
        for pose, alpha in zip(poseset.poses[1:], ALPHA_SCHEDULE):
            assert np.allclose(pose.position, center)
            relative = first.orientation.inverse() * pose.orientation
            assert relative.isclose(UnitQuat.from_axis_angle([0.0, 0.0, 1.0], alpha))
            assert np.allclose(pose.normal, first.normal, atol=1e-9)
        assert np.isclose(poseset.camera_distance, np.linalg.norm(center))


def test_perceive_zero_masks():
    """No masks means no pose sets."""
    observation = Observation(np.zeros((5, 5, 3), dtype=np.uint8), DepthMap(np.ones((5, 5))), SMALL)
    assert perceive(observation, []) == []


def test_perceive_matches_ground_truth():
    """Unoccluded noiseless leaves are located within a centimeter and five degrees."""
    intrinsics = CameraIntrinsics.default()
    for seed in range(3):
        scene = gen_batch(seed, 3)
        observation, masks, ground_truth = render(scene, intrinsics)
        posesets = perceive(observation, masks)
        assert len(posesets) == 3
        distances = [poseset.camera_distance for poseset in posesets]
        assert distances == sorted(distances)
        for poseset in posesets:
            truth = ground_truth[poseset.leaf_id]
            assert np.linalg.norm(poseset.center - truth.center) < 0.01
            assert abs(np.dot(poseset.poses[0].normal, truth.normal)) > np.cos(np.radians(5.0))


def test_pipeline_drops_leaf_without_depth():
    """A mask over missing depth is dropped with its reason, the others survive."""
    intrinsics = CameraIntrinsics.default()
    scene = gen_batch(11, 2)
    observation, masks, _ = render(scene, intrinsics)
    depth = np.where(masks[0].bits, 0.0, observation.depth.values)
    blanked = Observation(observation.image, DepthMap(depth), intrinsics)

    report = PerceptionPipeline().run(blanked, masks)
    assert [poseset.leaf_id for poseset in report.posesets] == [1]
    assert [(dropped.leaf_id, dropped.reason) for dropped in report.dropped] == [(0, "EmptyCloudError")]
    assert set(report.clouds) == {1}
