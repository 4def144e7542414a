"""Test the leafgrasp command line end to end."""

import os

import numpy as np
import pandas as pd
import pytest

from leafgrasp.cli import EXIT_CONFIGURATION, EXIT_MALFORMED_INPUT, main
from leafgrasp.experiment import read_results
from leafgrasp.formats import read_json, read_ply_counts, read_posesets, write_json, write_mask
from leafgrasp.kinematics import ArmModel, fk
from leafgrasp.perception import BinaryMask


def directory_bytes(directory) -> dict[str, bytes]:
    return {name: (directory / name).read_bytes() for name in sorted(os.listdir(directory))}


def exit_code(argv: list[str]) -> int:
    with pytest.raises(SystemExit) as info:
        main(argv)
    return int(info.value.code)


def write_manifest(tmp_path, scene) -> str:
    (tmp_path / "reachable").mkdir()
    write_json(scene.to_dict(), str(tmp_path / "reachable" / "scene.json"))
    write_json({"setting": "in_lab", "scenes": ["reachable/scene.json"]}, str(tmp_path / "run.json"))
    return str(tmp_path / "run.json")


def test_gen_scene_is_reproducible(tmp_path):
    """The same seed writes byte-identical scene files."""
    main(["gen-scene", "--seed", "42", "-n", "3", "--out", str(tmp_path / "a")])
    main(["gen-scene", "--seed", "42", "-n", "3", "--out", str(tmp_path / "b")])
    first = directory_bytes(tmp_path / "a")
    assert first == directory_bytes(tmp_path / "b")
    assert [name for name in first if name.startswith("mask_")] == ["mask_000.pbm", "mask_001.pbm", "mask_002.pbm"]


def test_gen_scene_rejects_empty_batches(tmp_path):
    """Zero leaves is a usage error."""
    assert exit_code(["gen-scene", "-n", "0", "--out", str(tmp_path)]) == EXIT_CONFIGURATION


def test_perceive(tmp_path):
    """At most one pose set per mask, each with five poses."""
    scene = tmp_path / "scene"
    main(["gen-scene", "--seed", "5", "-n", "3", "--preset", "lab", "--out", str(scene)])
    report = str(tmp_path / "report.json")
    main(["perceive", "--in", str(scene), "--out", str(tmp_path / "posesets.json"), "--report", report])
    posesets = read_posesets(str(tmp_path / "posesets.json"))
    assert len(posesets) <= 3
    assert all(len(poseset.poses) == 5 for poseset in posesets)
    assert len(posesets) + len(read_json(report)["dropped"]) == 3


def test_perceive_single_noiseless_leaf(tmp_path):
    """The perceived center of an unoccluded noiseless leaf lies on the leaf, near its true center."""
    scene = tmp_path / "scene"
    main(["gen-scene", "--seed", "9", "-n", "1", "--out", str(scene)])
    main(["perceive", "--in", str(scene), "--out", str(tmp_path / "posesets.json")])
    (poseset,) = read_posesets(str(tmp_path / "posesets.json"))
    (truth,) = read_json(str(scene / "gt.json"))
    assert poseset.leaf_id == truth["leaf_id"] == 0
    assert np.linalg.norm(poseset.center - np.asarray(truth["pose_camera"]["p"])) < 0.005


def test_perceive_corrupted_depth(tmp_path):
    """A depth file with the wrong magic is malformed input."""
    main(["gen-scene", "--seed", "1", "-n", "1", "--out", str(tmp_path)])
    depth = tmp_path / "depth.dpth"
    depth.write_bytes(b"JUNK" + depth.read_bytes()[4:])
    argv = ["perceive", "--in", str(tmp_path), "--out", str(tmp_path / "posesets.json")]
    assert exit_code(argv) == EXIT_MALFORMED_INPUT


def test_perceive_mask_size_mismatch(tmp_path):
    """A mask smaller than the depth map is malformed input."""
    main(["gen-scene", "--seed", "1", "-n", "1", "--out", str(tmp_path)])
    write_mask(BinaryMask(np.zeros((10, 10), dtype=bool)), str(tmp_path / "mask_000.pbm"))
    argv = ["perceive", "--in", str(tmp_path), "--out", str(tmp_path / "posesets.json")]
    assert exit_code(argv) == EXIT_MALFORMED_INPUT


def test_perceive_unsupported_output(tmp_path):
    """Pose sets are only written as JSON."""
    main(["gen-scene", "--seed", "1", "-n", "1", "--out", str(tmp_path)])
    assert exit_code(["perceive", "--in", str(tmp_path), "--out", str(tmp_path / "posesets.txt")]) == EXIT_CONFIGURATION


def test_plan(tmp_path):
    """The planned path starts at home and is written one waypoint per row."""
    arm = ArmModel.default()
    goal = fk(arm, arm.home_configuration + np.array([0.3, -0.2, 0.1, 0.0, 0.2, 0.1]))
    write_json(goal.to_dict(), str(tmp_path / "goal.json"))
    main(["plan", "--goal", str(tmp_path / "goal.json"), "--out", str(tmp_path / "path.csv")])
    path = pd.read_csv(tmp_path / "path.csv")
    assert list(path.columns) == ["q1", "q2", "q3", "q4", "q5", "q6"]
    assert len(path) >= 2
    assert np.allclose(path.iloc[0].to_numpy(), arm.home_configuration)
    assert fk(arm, path.iloc[-1].to_numpy()).isclose(goal, atol=1e-3)


def test_run_with_missing_arm(tmp_path):
    """A manifest naming a missing arm file is a configuration error."""
    write_json({"arm": "no_such_arm.json"}, str(tmp_path / "run.json"))
    assert exit_code(["run", "--config", str(tmp_path / "run.json")]) == EXIT_CONFIGURATION


def test_run_metrics_and_export(tmp_path, reachable_scene):
    """A reachable leaf gives full LPB-1 success; results are reproducible and exportable."""
    manifest = write_manifest(tmp_path, reachable_scene)
    out = tmp_path / "results"
    main(["run", "--config", manifest, "--out", str(out)])
    first = (out / "results.json").read_bytes()
    main(["run", "--config", manifest, "--out", str(out)])
    assert (out / "results.json").read_bytes() == first
    assert (out / "run.log").exists()

    table = pd.read_csv(out / "metrics.csv")
    assert table["setting"].tolist() == ["in_lab"]
    assert table.loc[0, "lpb1_success"] == 100.0

    main(["metrics", "--results", str(out / "results.json"), "--out", str(tmp_path / "metrics.csv")])
    assert pd.read_csv(tmp_path / "metrics.csv").equals(table)

    _, runs = read_results(str(out / "results.json"))
    (batch,) = runs

    main(["export", "--results", str(out / "results.json"), "--format", "ply", "--out", str(tmp_path / "ply")])
    counts = read_ply_counts(str(tmp_path / "ply" / "reachable.ply"))
    assert counts["vertex"] == sum(len(cloud) for cloud in batch.clouds) + 4 * len(batch.posesets)
    assert counts["edge"] == 3 * len(batch.posesets)

    main(["export", "--results", str(out / "results.json"), "--format", "csv", "--out", str(tmp_path / "csv")])
    paths = pd.read_csv(tmp_path / "csv" / "paths.csv")
    assert len(paths) == sum(len(record.path) for record in batch.approaches if record.path is not None)
    assert set(paths["scene_id"]) == {"reachable"}


def test_export_without_leaves(tmp_path):
    """A batch with nothing perceived exports an empty PLY."""
    write_json({"setting": "in_lab", "batches": [{"scene_id": "empty"}]}, str(tmp_path / "results.json"))
    main(["export", "--results", str(tmp_path / "results.json"), "--format", "ply", "--out", str(tmp_path)])
    assert read_ply_counts(str(tmp_path / "empty.ply")) == {"vertex": 0, "edge": 0}


def test_no_subcommand():
    """Calling the program without a subcommand prints help and fails."""
    assert exit_code([]) == EXIT_CONFIGURATION
