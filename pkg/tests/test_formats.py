"""Test the on-disk formats of depth maps, masks, images, JSON files and PLY exports."""

import numpy as np
import pytest

from leafgrasp.exceptions import MalformedInputError, UnsupportedOutputFormatError
from leafgrasp.formats import (
    DEPTH_HEADER,
    ensure_json_path,
    is_json_path,
    pose_axes,
    read_depth,
    read_image,
    read_intrinsics,
    read_json,
    read_mask,
    read_ply_counts,
    read_posesets,
    write_depth,
    write_image,
    write_json,
    write_mask,
    write_ply,
    write_posesets,
)
from leafgrasp.geometry import CameraIntrinsics, Pose, UnitQuat
from leafgrasp.perception import BinaryMask, DepthMap, LeafCloud, PoseSet


def test_depth_file(tmp_path):
    """Depth is stored as float32 behind a 12-byte header."""
    values = np.random.default_rng(0).uniform(0.0, 2.0, size=(3, 5))
    path = str(tmp_path / "depth.dpth")
    write_depth(DepthMap(values), path)
    with open(path, "rb") as handle:
        assert len(handle.read()) == DEPTH_HEADER.itemsize + 4 * 15
    assert np.array_equal(read_depth(path).values, values.astype(np.float32).astype(np.float64))


def test_corrupted_depth_files(tmp_path):
    """Wrong magic, truncation and NaN payloads are rejected."""
    path = str(tmp_path / "depth.dpth")
    write_depth(DepthMap(np.ones((2, 2))), path)
    with open(path, "rb") as handle:
        payload = handle.read()

    broken = tmp_path / "magic.dpth"
    broken.write_bytes(b"XPTH" + payload[4:])
    with pytest.raises(MalformedInputError):
        read_depth(str(broken))

    truncated = tmp_path / "short.dpth"
    truncated.write_bytes(payload[:-2])
    with pytest.raises(MalformedInputError):
        read_depth(str(truncated))

    nan = tmp_path / "nan.dpth"
    nan.write_bytes(payload[: DEPTH_HEADER.itemsize] + np.full(4, np.nan, dtype="<f4").tobytes())
    with pytest.raises(MalformedInputError):
        read_depth(str(nan))


def test_mask_file(tmp_path):
    """Bitmaps whose width is not a multiple of eight keep every pixel."""
    bits = np.random.default_rng(1).random((5, 13)) < 0.5
    path = str(tmp_path / "mask.pbm")
    write_mask(BinaryMask(bits), path)
    assert np.array_equal(read_mask(path).bits, bits)


def test_mask_header_with_comment(tmp_path):
    """Comments in the netpbm header are skipped."""
    path = tmp_path / "mask.pbm"
    path.write_bytes(b"P4\n# made by hand\n3 2\n" + bytes([0b10100000, 0b01000000]))
    assert np.array_equal(read_mask(str(path)).bits, [[True, False, True], [False, True, False]])

    wrong = tmp_path / "wrong.pbm"
    wrong.write_bytes(b"P5\n3 2\n255\n" + bytes(6))
    with pytest.raises(MalformedInputError):
        read_mask(str(wrong))


def test_image_file(tmp_path):
    """RGB images are stored as 8-bit PPM."""
    image = np.random.default_rng(2).integers(0, 256, size=(4, 6, 3), dtype=np.uint8)
    path = str(tmp_path / "image.ppm")
    write_image(image, path)
    assert np.array_equal(read_image(path), image)


def test_json_paths(tmp_path):
    """Only JSON suffixes, optionally compressed, are accepted."""
    assert is_json_path("a.json") and is_json_path("a.json.gz") and is_json_path("a.json.xz")
    assert not is_json_path("a.csv")
    with pytest.raises(UnsupportedOutputFormatError):
        ensure_json_path("posesets.txt")

    path = str(tmp_path / "data.json.gz")
    write_json({"b": [1, 2], "a": None}, path)
    assert read_json(path) == {"a": None, "b": [1, 2]}


def test_unreadable_json(tmp_path):
    """Missing and invalid JSON files are malformed input."""
    with pytest.raises(MalformedInputError):
        read_json(str(tmp_path / "missing.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(MalformedInputError):
        read_json(str(broken))


def test_intrinsics_file(tmp_path):
    """Intrinsics files must carry valid pinhole parameters."""
    path = str(tmp_path / "intrinsics.json")
    write_json({"fx": 500.0, "fy": 500.0, "cx": 2.0}, path)
    with pytest.raises(MalformedInputError):
        read_intrinsics(path)
    write_json(dict(CameraIntrinsics.default().to_dict(), cx=-1.0), path)
    with pytest.raises(MalformedInputError):
        read_intrinsics(path)


def test_posesets_file(tmp_path):
    """Pose sets are a JSON array and anything else is rejected."""
    pose = Pose(np.array([0.0, 0.1, 0.5]), UnitQuat.identity())
    posesets = [PoseSet(leaf_id=2, poses=(pose,) * 5, camera_distance=0.51)]
    path = str(tmp_path / "posesets.json")
    write_posesets(posesets, path)
    restored = read_posesets(path)
    assert [poseset.leaf_id for poseset in restored] == [2]
    assert restored[0].poses[4].isclose(pose)

    write_json({"leaf_id": 2}, path)
    with pytest.raises(MalformedInputError):
        read_posesets(path)


def test_pose_axes():
    """Axis tips sit one axis length from the origin along t, b and n."""
    pose = Pose(np.array([1.0, 2.0, 3.0]), UnitQuat.from_axis_angle([0, 0, 1], np.pi / 2))
    axes = pose_axes(pose, length=0.1)
    assert np.allclose(axes, [[1.0, 2.0, 3.0], [1.0, 2.1, 3.0], [0.9, 2.0, 3.0], [1.0, 2.0, 3.1]])


def test_empty_ply(tmp_path):
    """Without clouds or poses the header is still complete."""
    path = str(tmp_path / "empty.ply")
    write_ply(path)
    assert read_ply_counts(path) == {"vertex": 0, "edge": 0}


def test_ply_counts(tmp_path):
    """One leaf and its pose give the cloud size plus four axis vertices and three edges."""
    points = np.random.default_rng(3).normal(size=(25, 3))
    cloud = LeafCloud(leaf_id=0, points=points, pixel_indices=np.arange(25))
    pose = Pose(np.zeros(3), UnitQuat.identity())
    path = str(tmp_path / "leaf.ply")
    write_ply(path, [cloud], [pose])
    assert read_ply_counts(path) == {"vertex": 29, "edge": 3}

    with open(path, encoding="ascii") as handle:
        lines = handle.read().splitlines()
    body = lines[lines.index("end_header") + 1 :]
    assert len(body) == 29 + 3
    assert body[-3:] == ["25 26 255 0 0", "25 27 0 255 0", "25 28 0 0 255"]


def test_not_a_ply(tmp_path):
    """Files without the PLY magic are malformed."""
    path = tmp_path / "cloud.ply"
    path.write_text("xyz\n", encoding="ascii")
    with pytest.raises(MalformedInputError):
        read_ply_counts(str(path))
