"""Readers and writers for the on-disk artefacts of a run.

Binary frames use small self-describing containers: ``DPTH`` for depth, PBM (P4)
for instance masks and PPM (P6) for the colour channel. Point clouds and pose
axes are written as ASCII PLY. Every JSON file goes through compress_json, so a
``.json.gz`` or ``.json.xz`` suffix compresses transparently.
"""

import logging
import os
from typing import Any, Optional, Sequence

import compress_json  # type: ignore[import-untyped]
import numpy as np
import numpy.typing as npt

from leafgrasp.exceptions import InvalidIntrinsicsError, MalformedInputError, UnsupportedOutputFormatError
from leafgrasp.geometry import CameraIntrinsics, Pose
from leafgrasp.perception import BinaryMask, DepthMap, LeafCloud, PoseSet

logger = logging.getLogger(__name__)

COMPRESSIONS: list[str] = ["gz", "xz", ""]
DEPTH_MAGIC: bytes = b"DPTH"
DEPTH_HEADER = np.dtype([("magic", "S4"), ("width", "<u4"), ("height", "<u4")])
AXIS_LENGTH: float = 0.03
AXIS_COLORS: tuple[tuple[int, int, int], ...] = ((255, 0, 0), (0, 255, 0), (0, 0, 255))
LEAF_PALETTE: tuple[tuple[int, int, int], ...] = (
    (46, 139, 87),
    (154, 205, 50),
    (0, 128, 128),
    (189, 183, 107),
    (85, 107, 47),
    (107, 142, 35),
)


def is_json_path(path: str) -> bool:
    """Whether ``path`` names a (possibly compressed) JSON file."""
    return any(path.endswith(f".json.{compression}" if compression else ".json") for compression in COMPRESSIONS)


def ensure_json_path(path: str) -> None:
    """Raise when ``path`` is not a JSON destination."""
    if not is_json_path(path):
        raise UnsupportedOutputFormatError(
            output_format=path,
            available_output_formats=[".json" if not c else f".json.{c}" for c in COMPRESSIONS],
        )


def write_json(data: Any, path: str) -> None:
    """Dump ``data`` to a JSON file, compressed according to the suffix."""
    ensure_json_path(path)
    compress_json.dump(data, path, json_kwargs={"indent": 2, "sort_keys": True})


def read_json(path: str) -> Any:
    """Load a JSON file, raising :class:`MalformedInputError` on unreadable content."""
    if not os.path.exists(path):
        raise MalformedInputError(path, "file does not exist")
    try:
        return compress_json.load(path)
    except (ValueError, OSError, EOFError) as error:
        raise MalformedInputError(path, str(error)) from error


def write_depth(depth: DepthMap, path: str) -> None:
    """Write a depth map as ``DPTH``, u32 width, u32 height, float32 meters row-major."""
    header = np.array([(DEPTH_MAGIC, depth.width, depth.height)], dtype=DEPTH_HEADER)
    with open(path, "wb") as handle:
        handle.write(header.tobytes())
        handle.write(depth.values.astype("<f4").tobytes())


def read_depth(path: str) -> DepthMap:
    """Read a ``DPTH`` file.

    Raises
    ------
    MalformedInputError
        On a wrong magic, a truncated payload or trailing bytes.
    """
    with open(path, "rb") as handle:
        payload = handle.read()
    if len(payload) < DEPTH_HEADER.itemsize:
        raise MalformedInputError(path, "file is shorter than the depth header")
    header = np.frombuffer(payload, dtype=DEPTH_HEADER, count=1)[0]
    if header["magic"] != DEPTH_MAGIC:
        raise MalformedInputError(path, f"bad magic {bytes(header['magic'])!r}, expected {DEPTH_MAGIC!r}")
    width, height = int(header["width"]), int(header["height"])
    expected = DEPTH_HEADER.itemsize + 4 * width * height
    if len(payload) != expected:
        raise MalformedInputError(path, f"expected {expected} bytes for {width}x{height}, found {len(payload)}")
    values = np.frombuffer(payload, dtype="<f4", offset=DEPTH_HEADER.itemsize).reshape(height, width)
    if not np.all(np.isfinite(values)):
        raise MalformedInputError(path, "depth contains non-finite values")
    return DepthMap(values.astype(np.float64))


def _netpbm_header(payload: bytes, path: str, magic: bytes, fields: int) -> tuple[list[int], int]:
    """Parse a binary netpbm header, skipping comments; returns the fields and the raster offset."""
    if not payload.startswith(magic):
        raise MalformedInputError(path, f"expected a {magic.decode()} netpbm file")
    values: list[int] = []
    position = len(magic)
    while len(values) < fields:
        while position < len(payload) and payload[position : position + 1].isspace():
            position += 1
        if payload[position : position + 1] == b"#":
            position = payload.find(b"\n", position)
            if position < 0:
                raise MalformedInputError(path, "header ends inside a comment")
            continue
        start = position
        while position < len(payload) and payload[position : position + 1].isdigit():
            position += 1
        if start == position:
            raise MalformedInputError(path, "malformed netpbm header")
        values.append(int(payload[start:position]))
    # exactly one whitespace byte separates the header from the raster
    return values, position + 1


def write_mask(mask: BinaryMask, path: str) -> None:
    """Write a mask as a PBM (P4) bitmap, set bits are leaf pixels."""
    with open(path, "wb") as handle:
        handle.write(f"P4\n{mask.width} {mask.height}\n".encode("ascii"))
        handle.write(np.packbits(mask.bits, axis=1).tobytes())


def read_mask(path: str) -> BinaryMask:
    """Read a PBM (P4) bitmap."""
    with open(path, "rb") as handle:
        payload = handle.read()
    (width, height), offset = _netpbm_header(payload, path, b"P4", 2)
    row_bytes = (width + 7) // 8
    raster = payload[offset:]
    if len(raster) != row_bytes * height:
        raise MalformedInputError(path, f"expected {row_bytes * height} raster bytes, found {len(raster)}")
    packed = np.frombuffer(raster, dtype=np.uint8).reshape(height, row_bytes)
    return BinaryMask(np.unpackbits(packed, axis=1)[:, :width].astype(bool))


def write_image(image: npt.NDArray[np.uint8], path: str) -> None:
    """Write an ``(height, width, 3)`` RGB image as PPM (P6)."""
    height, width = image.shape[:2]
    with open(path, "wb") as handle:
        handle.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        handle.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def read_image(path: str) -> npt.NDArray[np.uint8]:
    """Read a PPM (P6) image with 8-bit channels."""
    with open(path, "rb") as handle:
        payload = handle.read()
    (width, height, maxval), offset = _netpbm_header(payload, path, b"P6", 3)
    if maxval != 255:
        raise MalformedInputError(path, f"only 8-bit PPM is supported, found maxval {maxval}")
    raster = payload[offset:]
    if len(raster) != 3 * width * height:
        raise MalformedInputError(path, f"expected {3 * width * height} raster bytes, found {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3).copy()


def write_intrinsics(intrinsics: CameraIntrinsics, path: str) -> None:
    """Write camera intrinsics as JSON."""
    write_json(intrinsics.to_dict(), path)


def read_intrinsics(path: str) -> CameraIntrinsics:
    """Read camera intrinsics from JSON."""
    data = read_json(path)
    try:
        return CameraIntrinsics.from_dict(data)
    except (KeyError, TypeError) as error:
        raise MalformedInputError(path, f"missing intrinsics field {error}") from error
    except InvalidIntrinsicsError as error:
        raise MalformedInputError(path, str(error)) from error


def write_posesets(posesets: Sequence[PoseSet], path: str) -> None:
    """Write pose sets as a JSON array."""
    write_json([poseset.to_dict() for poseset in posesets], path)


def read_posesets(path: str) -> list[PoseSet]:
    """Read a JSON array of pose sets."""
    data = read_json(path)
    if not isinstance(data, list):
        raise MalformedInputError(path, "expected a JSON array of pose sets")
    try:
        return [PoseSet.from_dict(poseset) for poseset in data]
    except (KeyError, TypeError, ValueError) as error:
        raise MalformedInputError(path, f"invalid pose set: {error}") from error


def pose_axes(pose: Pose, length: float = AXIS_LENGTH) -> npt.NDArray[np.float64]:
    """Origin followed by the tips of the t, b and n axes, ``(4, 3)``."""
    return np.vstack([pose.position, pose.position + length * pose.axes.T])


def write_ply(
    path: str,
    clouds: Sequence[LeafCloud] = (),
    poses: Sequence[Pose] = (),
    colors: Optional[Sequence[tuple[int, int, int]]] = None,
) -> None:
    """Write coloured leaf clouds and pose axes as ASCII PLY.

    Each pose contributes four vertices (origin and three axis tips) and three
    edges coloured red, green and blue for t, b and n.
    """
    colors = LEAF_PALETTE if colors is None else colors
    vertices: list[npt.NDArray[np.float64]] = []
    vertex_colors: list[npt.NDArray[np.int64]] = []
    for index, cloud in enumerate(clouds):
        vertices.append(cloud.points)
        vertex_colors.append(np.tile(colors[index % len(colors)], (len(cloud), 1)))

    offset = sum(len(cloud) for cloud in clouds)
    edges: list[tuple[int, int, int, int, int]] = []
    for pose in poses:
        vertices.append(pose_axes(pose))
        vertex_colors.append(np.tile((255, 255, 255), (4, 1)))
        edges.extend((offset, offset + axis, *AXIS_COLORS[axis - 1]) for axis in (1, 2, 3))
        offset += 4

    points = np.vstack(vertices) if vertices else np.zeros((0, 3))
    rgb = np.vstack(vertex_colors) if vertex_colors else np.zeros((0, 3), dtype=np.int64)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(points)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        f"element edge {len(edges)}",
        "property int vertex1",
        "property int vertex2",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    with open(path, "w", encoding="ascii") as handle:
        handle.write("\n".join(header) + "\n")
        for (x, y, z), (r, g, b) in zip(points, rgb):
            handle.write(f"{x:.6f} {y:.6f} {z:.6f} {int(r)} {int(g)} {int(b)}\n")
        for edge in edges:
            handle.write(" ".join(str(value) for value in edge) + "\n")
    logger.debug("Wrote %d vertices and %d edges to %s", len(points), len(edges), path)


def read_ply_counts(path: str) -> dict[str, int]:
    """Element counts declared in a PLY header."""
    counts: dict[str, int] = {}
    with open(path, "r", encoding="ascii") as handle:
        if handle.readline().strip() != "ply":
            raise MalformedInputError(path, "missing ply magic")
        for line in handle:
            fields = line.split()
            if fields and fields[0] == "end_header":
                return counts
            if len(fields) == 3 and fields[0] == "element":
                counts[fields[1]] = int(fields[2])
    raise MalformedInputError(path, "missing end_header")
