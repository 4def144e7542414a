"""Command line interface: ``leafgrasp <subcommand>``."""

import logging
import os
from argparse import ArgumentParser, ArgumentTypeError, Namespace
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from leafgrasp.collision import CollisionScene
from leafgrasp.exceptions import ConfigurationError, LeafGraspError, MalformedInputError, UnsupportedOutputFormatError
from leafgrasp.experiment import (
    LOG_FILE,
    RunConfiguration,
    read_rendered_observation,
    read_results,
    render_scene,
    run_experiment,
    write_rendered_scene,
    write_results,
)
from leafgrasp.formats import read_intrinsics, read_json, write_json, write_ply, write_posesets
from leafgrasp.geometry import CameraIntrinsics, Pose
from leafgrasp.kinematics import ArmModel, IKConfiguration, solve_ik
from leafgrasp.log import configure_logging
from leafgrasp.metrics import display_reports, lpb_report_table
from leafgrasp.perception import PerceptionPipeline
from leafgrasp.planning import PlannerConfig, plan_rrtc
from leafgrasp.scenegen import DEFAULT_STANDOFF, NOISE_PRESETS, gen_batch

logger = logging.getLogger(__name__)

EXPORT_FORMATS: list[str] = ["ply", "csv"]
EXIT_CONFIGURATION: int = 2
EXIT_MALFORMED_INPUT: int = 3
EXIT_FAILURE: int = 4


def positive_int(value: str) -> int:
    """Argparse type for integers of at least 1."""
    try:
        number = int(value)
    except ValueError as error:
        raise ArgumentTypeError(f"expected an integer, got {value!r}") from error
    if number < 1:
        raise ArgumentTypeError(f"expected a positive integer, got {number}")
    return number


def joint_columns(dof: int) -> list[str]:
    """Names of the joint columns of path CSVs."""
    return [f"q{joint + 1}" for joint in range(dof)]


def gen_scene(args: Namespace) -> None:
    """
    Generate one batch of leaves and write its render files.
    """
    intrinsics = CameraIntrinsics.default() if args.intrinsics is None else read_intrinsics(args.intrinsics)
    scene = gen_batch(args.seed, args.n_leaves, args.occlusion, args.standoff, noise_preset=args.preset)
    write_rendered_scene(render_scene(scene, intrinsics), args.out)


def perceive(args: Namespace) -> None:
    """
    Run the perception pipeline on a directory written by gen-scene.
    """
    observation, masks, leaf_ids = read_rendered_observation(args.input)
    report = PerceptionPipeline(args.z_threshold).run(observation, masks, leaf_ids)
    write_posesets(report.posesets, args.out)
    if args.report is not None:
        write_json(report.to_dict(), args.report)

    for dropped in report.dropped:
        logger.warning("Leaf %d dropped: %s", dropped.leaf_id, dropped.reason)

    table = Table(title="Perceived Leaves", show_header=True, header_style="bold magenta")
    table.add_column("Leaf", style="cyan", justify="right")
    table.add_column("Distance (m)", style="green", justify="right")
    table.add_column("Points", style="yellow", justify="right")
    table.add_column("Status", style="white")
    for poseset in report.posesets:
        table.add_row(
            str(poseset.leaf_id),
            f"{poseset.camera_distance:.3f}",
            str(len(report.clouds[poseset.leaf_id])),
            "ok",
        )
    for dropped in report.dropped:
        table.add_row(str(dropped.leaf_id), "-", "-", dropped.reason)
    Console().print(table)


def plan(args: Namespace) -> None:
    """
    Solve IK for a goal pose and plan a path to it from the arm's home.
    """
    arm = ArmModel.default() if args.arm is None else ArmModel.from_dict(read_json(args.arm))
    goal = Pose.from_dict(read_json(args.goal))
    scene = CollisionScene() if args.obstacles is None else CollisionScene.from_dict(read_json(args.obstacles))
    q_goal = solve_ik(arm, goal, arm.home_configuration, IKConfiguration().set_rng_seed(args.seed))
    path = plan_rrtc(arm, arm.home_configuration, q_goal, scene, PlannerConfig().set_rng_seed(args.seed))
    pd.DataFrame(path.waypoints, columns=joint_columns(arm.dof)).to_csv(args.out, index=False)
    logger.info("Planned %d waypoints to %s", len(path), args.out)


def run(args: Namespace) -> None:
    """
    Execute a full experiment: scenes, perception, manipulation and metrics.
    """
    configuration = RunConfiguration() if args.config is None else RunConfiguration.from_file(args.config)
    if args.seed is not None:
        configuration = configuration.set_seed(args.seed)
    if args.preset is not None:
        configuration = configuration.set_noise_preset(args.preset)
    if args.scenes is not None:
        configuration = configuration.set_generation(
            args.scenes,
            configuration.leaves_per_scene,
            configuration.occlusion_level,
            configuration.standoff,
        )
    if args.out is not None:
        configuration = configuration.set_output_directory(args.out)

    os.makedirs(configuration.output_directory, exist_ok=True)
    configure_logging(args.log_level, os.path.join(configuration.output_directory, LOG_FILE))
    result = run_experiment(configuration)
    write_results(result)
    display_reports(result.metrics())


def metrics(args: Namespace) -> None:
    """
    Recompute the metrics table from one or more results files.
    """
    settings: dict[str, list[Any]] = {}
    for path in args.results:
        setting, runs = read_results(path)
        settings.setdefault(setting, []).extend(runs)
    table = lpb_report_table(settings)
    if args.out is not None:
        table.to_csv(args.out, index=False)
    display_reports(table)


def export(args: Namespace) -> None:
    """
    Export the clouds and poses of a results file as PLY, or its paths as CSV.
    """
    _, runs = read_results(args.results)
    os.makedirs(args.out, exist_ok=True)

    if args.format == "ply":
        for batch in runs:
            write_ply(
                os.path.join(args.out, f"{batch.scene_id}.ply"),
                batch.clouds,
                [poseset.poses[0] for poseset in batch.posesets],
            )
        return None

    rows: list[dict[str, Any]] = []
    for batch in runs:
        for record in batch.approaches:
            if record.path is None:
                continue
            for index, waypoint in enumerate(record.path.waypoints):
                row: dict[str, Any] = {
                    "scene_id": batch.scene_id,
                    "leaf_id": record.leaf_id,
                    "pose_index": record.pose_index,
                    "waypoint": index,
                }
                row.update(zip(joint_columns(len(waypoint)), np.asarray(waypoint).tolist()))
                rows.append(row)
    pd.DataFrame(rows, columns=None if rows else ["scene_id", "leaf_id", "pose_index", "waypoint"]).to_csv(
        os.path.join(args.out, "paths.csv"), index=False
    )
    return None


def build_gen_scene_parser(parser: ArgumentParser) -> None:
    """Build the parser for the gen-scene subcommand."""
    parser.add_argument("--seed", type=int, default=0, help="Seed of the scene generator.")
    parser.add_argument(
        "--n-leaves", "-n", type=positive_int, default=3, help="Number of leaves in the batch."
    )
    parser.add_argument(
        "--occlusion", type=float, default=0.0, help="Probability that a leaf overlaps a previous one."
    )
    parser.add_argument(
        "--preset", choices=sorted(NOISE_PRESETS), default="none", help="Depth noise preset of the render."
    )
    parser.add_argument("--standoff", type=float, default=DEFAULT_STANDOFF, help="Camera to foliage distance, meters.")
    parser.add_argument("--intrinsics", type=str, default=None, help="Camera intrinsics JSON file.")
    parser.add_argument("--out", "-o", type=str, required=True, help="Directory to write the scene files to.")
    parser.set_defaults(func=gen_scene)


def build_perceive_parser(parser: ArgumentParser) -> None:
    """Build the parser for the perceive subcommand."""
    parser.add_argument("--in", "-i", dest="input", type=str, required=True, help="Directory written by gen-scene.")
    parser.add_argument("--out", "-o", type=str, required=True, help="Pose sets JSON file to write.")
    parser.add_argument(
        "--report",
        type=str,
        default=None,
        help="Optional JSON file for the full report with clouds and dropped leaves.",
    )
    parser.add_argument("--z-threshold", type=float, default=2.33, help="Z-score threshold of the outlier filter.")
    parser.set_defaults(func=perceive)


def build_plan_parser(parser: ArgumentParser) -> None:
    """Build the parser for the plan subcommand."""
    parser.add_argument("--goal", type=str, required=True, help="JSON file with the goal pose in the base frame.")
    parser.add_argument("--arm", type=str, default=None, help="Arm description JSON file.")
    parser.add_argument("--obstacles", type=str, default=None, help="Collision scene JSON file.")
    parser.add_argument("--seed", type=int, default=0, help="Seed of IK restarts and of the planner.")
    parser.add_argument("--out", "-o", type=str, required=True, help="CSV file for the joint path.")
    parser.set_defaults(func=plan)


def build_run_parser(parser: ArgumentParser) -> None:
    """Build the parser for the run subcommand."""
    parser.add_argument("--config", "-c", type=str, default=None, help="Run manifest JSON file.")
    parser.add_argument("--seed", type=int, default=None, help="Override the manifest's master seed.")
    parser.add_argument(
        "--preset", choices=sorted(NOISE_PRESETS), default=None, help="Override the manifest's noise preset."
    )
    parser.add_argument("--scenes", type=positive_int, default=None, help="Number of scenes to generate.")
    parser.add_argument("--out", "-o", type=str, default=None, help="Override the manifest's output directory.")
    parser.set_defaults(func=run)


def build_metrics_parser(parser: ArgumentParser) -> None:
    """Build the parser for the metrics subcommand."""
    parser.add_argument("--results", "-r", type=str, nargs="+", required=True, help="results.json files.")
    parser.add_argument("--out", "-o", type=str, default=None, help="metrics CSV file to write.")
    parser.set_defaults(func=metrics)


def build_export_parser(parser: ArgumentParser) -> None:
    """Build the parser for the export subcommand."""
    parser.add_argument("--results", "-r", type=str, required=True, help="results.json file.")
    parser.add_argument("--format", "-f", choices=EXPORT_FORMATS, required=True, help="Export format.")
    parser.add_argument("--out", "-o", type=str, required=True, help="Directory to write the exports to.")
    parser.set_defaults(func=export)


def build_parser() -> ArgumentParser:
    """Build the top-level parser."""
    parser: ArgumentParser = ArgumentParser(prog="leafgrasp")
    parser.add_argument(
        "--log-level", type=str, default=None, help="Log level; defaults to $LEAFGRASP_LOG, else WARNING."
    )
    subparsers = parser.add_subparsers(title="subcommands", dest="subcommand")
    build_gen_scene_parser(subparsers.add_parser("gen-scene", help="Generate and render a batch of leaves."))
    build_perceive_parser(subparsers.add_parser("perceive", help="Estimate leaf poses from a rendered batch."))
    build_plan_parser(subparsers.add_parser("plan", help="Plan a path to a single goal pose."))
    build_run_parser(subparsers.add_parser("run", help="Run a full experiment from a manifest."))
    build_metrics_parser(subparsers.add_parser("metrics", help="Recompute metrics from results files."))
    build_export_parser(subparsers.add_parser("export", help="Export results as PLY or CSV."))
    return parser


def main(argv: Optional[Sequence[str]] = None) -> None:
    """Main entry point for the CLI."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.subcommand is None:
        parser.print_help()
        raise SystemExit(EXIT_CONFIGURATION)

    try:
        configure_logging(args.log_level)
        args.func(args)
    except (ConfigurationError, UnsupportedOutputFormatError) as error:
        logger.error("%s", error)
        raise SystemExit(EXIT_CONFIGURATION) from error
    except MalformedInputError as error:
        logger.error("%s", error)
        raise SystemExit(EXIT_MALFORMED_INPUT) from error
    except (LeafGraspError, OSError) as error:
        logger.error("%s", error)
        raise SystemExit(EXIT_FAILURE) from error
