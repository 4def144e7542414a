"""Run manifests and the experiment harness behind ``leafgrasp run``."""

import logging
import os
from dataclasses import dataclass
from glob import glob
from typing import Any, Optional

import numpy as np
import pandas as pd

from leafgrasp.exceptions import ConfigurationError, MalformedInputError
from leafgrasp.formats import (
    read_depth,
    read_image,
    read_intrinsics,
    read_json,
    read_mask,
    write_depth,
    write_image,
    write_intrinsics,
    write_json,
    write_mask,
)
from leafgrasp.geometry import CameraIntrinsics, Transform
from leafgrasp.kinematics import ArmModel, IKConfiguration
from leafgrasp.metrics import lpb_report_table
from leafgrasp.perception import BinaryMask, Observation, PerceptionPipeline
from leafgrasp.planning import PlannerConfig
from leafgrasp.scenegen import (
    DEFAULT_STANDOFF,
    NOISE_PRESETS,
    GtRecord,
    NoiseModel,
    Scene,
    default_camera_mount,
    gen_batch,
    render,
)
from leafgrasp.spectral import SpectralSensorConfiguration
from leafgrasp.workflow import BatchRun, GraspConfiguration, ManipulationWorkflow, derive_seed

logger = logging.getLogger(__name__)

RESULTS_FILE: str = "results.json"
METRICS_FILE: str = "metrics.csv"
SPECTRA_FILE: str = "spectra.csv"
LOG_FILE: str = "run.log"


class RunConfiguration:
    """Class to encapsulate a run manifest.

    A run either loads scene files or generates ``scene_count`` scenes from the
    master seed. Every other section falls back to its defaults when omitted.
    """

    def __init__(self) -> None:
        """Initialize the run with its defaults."""
        self._setting: str = "simulation"
        self._scene_files: list[str] = []
        self._scene_count: int = 1
        self._leaves_per_scene: tuple[int, int] = (1, 3)
        self._occlusion_level: float = 0.0
        self._standoff: float = DEFAULT_STANDOFF
        self._noise_preset: Optional[str] = None
        self._arm_file: Optional[str] = None
        self._intrinsics_file: Optional[str] = None
        self._extrinsic: Optional[Transform] = None
        self._seed: int = 0
        self._planner: PlannerConfig = PlannerConfig()
        self._ik: IKConfiguration = IKConfiguration()
        self._grasp: GraspConfiguration = GraspConfiguration()
        self._sensor: SpectralSensorConfiguration = SpectralSensorConfiguration()
        self._output_directory: str = "results"

    @property
    def setting(self) -> str:
        """Label of the experimental setting in metrics tables."""
        return self._setting

    @property
    def scene_files(self) -> list[str]:
        """Scene files to load; empty when scenes are generated."""
        return list(self._scene_files)

    @property
    def scene_count(self) -> int:
        """Number of scenes to process."""
        return len(self._scene_files) if self._scene_files else self._scene_count

    @property
    def leaves_per_scene(self) -> tuple[int, int]:
        """Inclusive range of leaves per generated scene."""
        return self._leaves_per_scene

    @property
    def occlusion_level(self) -> float:
        """Occlusion level of generated scenes."""
        return self._occlusion_level

    @property
    def standoff(self) -> float:
        """Camera standoff of generated scenes, meters."""
        return self._standoff

    @property
    def noise_preset(self) -> Optional[str]:
        """Noise preset overriding the scenes' own, if any."""
        return self._noise_preset

    @property
    def seed(self) -> int:
        """Master seed of the run."""
        return self._seed

    @property
    def planner(self) -> PlannerConfig:
        """Planner parameters."""
        return self._planner

    @property
    def ik(self) -> IKConfiguration:
        """IK parameters."""
        return self._ik

    @property
    def grasp(self) -> GraspConfiguration:
        """Grasp tolerances."""
        return self._grasp

    @property
    def sensor(self) -> SpectralSensorConfiguration:
        """Spectrometer parameters."""
        return self._sensor

    @property
    def output_directory(self) -> str:
        """Where results are written."""
        return self._output_directory

    @property
    def extrinsic(self) -> Transform:
        """Camera-to-base transform used when generating scenes."""
        return default_camera_mount() if self._extrinsic is None else self._extrinsic

    def arm(self) -> ArmModel:
        """Load the arm description, or return the default arm."""
        if self._arm_file is None:
            return ArmModel.default()
        return ArmModel.from_dict(read_json(self._arm_file))

    def intrinsics(self) -> CameraIntrinsics:
        """Load the intrinsics, or return the default camera."""
        if self._intrinsics_file is None:
            return CameraIntrinsics.default()
        return read_intrinsics(self._intrinsics_file)

    def set_setting(self, setting: str) -> "RunConfiguration":
        """Set the setting label."""
        if not setting:
            raise ConfigurationError("the setting label must not be empty")
        self._setting = setting
        return self

    def set_scene_files(self, scene_files: list[str]) -> "RunConfiguration":
        """Load these scene files instead of generating scenes."""
        missing = [path for path in scene_files if not os.path.exists(path)]
        if missing:
            raise ConfigurationError(f"scene files not found: {', '.join(missing)}")
        self._scene_files = list(scene_files)
        return self

    def set_generation(
        self,
        scene_count: int,
        leaves_per_scene: tuple[int, int] = (1, 3),
        occlusion_level: float = 0.0,
        standoff: float = DEFAULT_STANDOFF,
    ) -> "RunConfiguration":
        """Set the recipe for generated scenes."""
        low, high = leaves_per_scene
        if scene_count < 1:
            raise ConfigurationError(f"scene count must be at least 1, got {scene_count}")
        if not 1 <= low <= high:
            raise ConfigurationError(f"leaves per scene must be an increasing positive pair, got {leaves_per_scene}")
        if not 0.0 <= occlusion_level <= 1.0:
            raise ConfigurationError(f"occlusion level must lie in [0, 1], got {occlusion_level}")
        self._scene_count = scene_count
        self._leaves_per_scene = (low, high)
        self._occlusion_level = occlusion_level
        self._standoff = standoff
        return self

    def set_noise_preset(self, noise_preset: Optional[str]) -> "RunConfiguration":
        """Set the noise preset; ``None`` keeps each scene's own."""
        if noise_preset is not None and noise_preset not in NOISE_PRESETS:
            raise ConfigurationError(f"unknown noise preset {noise_preset!r}, expected one of {sorted(NOISE_PRESETS)}")
        self._noise_preset = noise_preset
        return self

    def set_arm_file(self, arm_file: Optional[str]) -> "RunConfiguration":
        """Set the arm description file."""
        if arm_file is not None and not os.path.exists(arm_file):
            raise ConfigurationError(f"arm file not found: {arm_file}")
        self._arm_file = arm_file
        return self

    def set_intrinsics_file(self, intrinsics_file: Optional[str]) -> "RunConfiguration":
        """Set the camera intrinsics file."""
        if intrinsics_file is not None and not os.path.exists(intrinsics_file):
            raise ConfigurationError(f"intrinsics file not found: {intrinsics_file}")
        self._intrinsics_file = intrinsics_file
        return self

    def set_extrinsic(self, extrinsic: Optional[Transform]) -> "RunConfiguration":
        """Set the camera mount."""
        self._extrinsic = extrinsic
        return self

    def set_seed(self, seed: int) -> "RunConfiguration":
        """Set the master seed."""
        if seed < 0:
            raise ConfigurationError(f"seed must be non-negative, got {seed}")
        self._seed = seed
        return self

    def set_planner(self, planner: PlannerConfig) -> "RunConfiguration":
        """Set the planner parameters."""
        self._planner = planner
        return self

    def set_ik(self, ik: IKConfiguration) -> "RunConfiguration":
        """Set the IK parameters."""
        self._ik = ik
        return self

    def set_grasp(self, grasp: GraspConfiguration) -> "RunConfiguration":
        """Set the grasp tolerances."""
        self._grasp = grasp
        return self

    def set_sensor(self, sensor: SpectralSensorConfiguration) -> "RunConfiguration":
        """Set the spectrometer parameters."""
        self._sensor = sensor
        return self

    def set_output_directory(self, output_directory: str) -> "RunConfiguration":
        """Set where results are written."""
        self._output_directory = output_directory
        return self

    def to_dict(self) -> dict[str, Any]:
        """Return the manifest, as recorded next to the results."""
        return {
            "setting": self._setting,
            "scenes": self._scene_files,
            "generate": {
                "count": self._scene_count,
                "leaves_per_scene": list(self._leaves_per_scene),
                "occlusion_level": self._occlusion_level,
                "standoff": self._standoff,
            },
            "noise_preset": self._noise_preset,
            "arm": self._arm_file,
            "intrinsics": self._intrinsics_file,
            "extrinsic": None if self._extrinsic is None else self._extrinsic.to_dict(),
            "seed": self._seed,
            "planner": self._planner.to_dict(),
            "ik": self._ik.to_dict(),
            "grasp": self._grasp.to_dict(),
            "sensor": self._sensor.to_dict(),
            "output_directory": self._output_directory,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_directory: str = ".") -> "RunConfiguration":
        """Create a run from a manifest; relative paths resolve against ``base_directory``."""

        def resolve(path: Optional[str]) -> Optional[str]:
            if path is None:
                return None
            return path if os.path.isabs(path) else os.path.join(base_directory, path)

        if not isinstance(data, dict):
            raise ConfigurationError("the run manifest must be a JSON object")
        try:
            generate = data.get("generate", {})
            low, high = generate.get("leaves_per_scene", (1, 3))
            configuration = (
                cls()
                .set_setting(str(data.get("setting", "simulation")))
                .set_generation(
                    int(generate.get("count", 1)),
                    (int(low), int(high)),
                    float(generate.get("occlusion_level", 0.0)),
                    float(generate.get("standoff", DEFAULT_STANDOFF)),
                )
                .set_scene_files([str(resolve(path)) for path in data.get("scenes", [])])
                .set_noise_preset(data.get("noise_preset"))
                .set_arm_file(resolve(data.get("arm")))
                .set_intrinsics_file(resolve(data.get("intrinsics")))
                .set_extrinsic(None if data.get("extrinsic") is None else Transform.from_dict(data["extrinsic"]))
                .set_seed(int(data.get("seed", 0)))
                .set_planner(PlannerConfig.from_dict(data.get("planner", {})))
                .set_ik(IKConfiguration.from_dict(data.get("ik", {})))
                .set_grasp(GraspConfiguration.from_dict(data.get("grasp", {})))
                .set_sensor(SpectralSensorConfiguration.from_dict(data.get("sensor", {})))
                .set_output_directory(str(resolve(data.get("output_directory", "results"))))
            )
        except (KeyError, TypeError, ValueError) as error:
            raise ConfigurationError(f"invalid run manifest: {error}") from error
        return configuration

    @classmethod
    def from_file(cls, path: str) -> "RunConfiguration":
        """Load a manifest from a JSON file."""
        if not os.path.exists(path):
            raise ConfigurationError(f"run manifest not found: {path}")
        try:
            data = read_json(path)
        except MalformedInputError as error:
            raise ConfigurationError(str(error)) from error
        return cls.from_dict(data, os.path.dirname(os.path.abspath(path)))


@dataclass(frozen=True, eq=False)
class RenderedScene:
    """A scene with its rendered observation, masks and ground truth."""

    scene: Scene
    observation: Observation
    masks: list[BinaryMask]
    ground_truth: list[GtRecord]


def render_scene(scene: Scene, intrinsics: CameraIntrinsics, noise_preset: Optional[str] = None) -> RenderedScene:
    """Render ``scene`` with the given preset, or with its own when omitted."""
    preset = scene.noise_preset if noise_preset is None else noise_preset
    seed = 0 if scene.seed is None else scene.seed
    observation, masks, ground_truth = render(scene, intrinsics, NoiseModel.preset(preset), derive_seed(seed, 1))
    return RenderedScene(scene, observation, masks, ground_truth)


def write_rendered_scene(rendered: RenderedScene, directory: str) -> None:
    """Write scene.json, depth.dpth, mask_*.pbm, image.ppm, intrinsics.json and gt.json."""
    os.makedirs(directory, exist_ok=True)
    write_json(rendered.scene.to_dict(), os.path.join(directory, "scene.json"))
    write_depth(rendered.observation.depth, os.path.join(directory, "depth.dpth"))
    write_image(rendered.observation.image, os.path.join(directory, "image.ppm"))
    write_intrinsics(rendered.observation.intrinsics, os.path.join(directory, "intrinsics.json"))
    width = max(3, len(str(len(rendered.masks) - 1)))
    for leaf_id, mask in enumerate(rendered.masks):
        write_mask(mask, os.path.join(directory, f"mask_{leaf_id:0{width}d}.pbm"))
    write_json([record.to_dict() for record in rendered.ground_truth], os.path.join(directory, "gt.json"))
    logger.info("Wrote scene with %d leaves to %s", len(rendered.masks), directory)


def read_rendered_observation(directory: str) -> tuple[Observation, list[BinaryMask], list[int]]:
    """Read the observation and masks written by :func:`write_rendered_scene`.

    Leaf ids come from the mask file names.
    """
    intrinsics = read_intrinsics(os.path.join(directory, "intrinsics.json"))
    depth = read_depth(os.path.join(directory, "depth.dpth"))
    image_path = os.path.join(directory, "image.ppm")
    if os.path.exists(image_path):
        image = read_image(image_path)
    else:
        image = np.zeros((*intrinsics.shape, 3), dtype=np.uint8)
    mask_paths = sorted(glob(os.path.join(directory, "mask_*.pbm")))
    leaf_ids: list[int] = []
    for path in mask_paths:
        stem = os.path.basename(path)[len("mask_") : -len(".pbm")]
        if not stem.isdigit():
            raise MalformedInputError(path, "mask file names must be mask_<leaf id>.pbm")
        leaf_ids.append(int(stem))
    masks = []
    for path in mask_paths:
        mask = read_mask(path)
        if mask.bits.shape != depth.values.shape:
            raise MalformedInputError(
                path, f"mask is {mask.width}x{mask.height} but the depth map is {depth.width}x{depth.height}"
            )
        masks.append(mask)
    return Observation(image=image, depth=depth, intrinsics=intrinsics), masks, leaf_ids


def read_scene(path: str) -> Scene:
    """Load a scene file."""
    try:
        return Scene.from_dict(read_json(path))
    except (KeyError, TypeError) as error:
        raise MalformedInputError(path, f"invalid scene: {error}") from error


@dataclass
class ExperimentResult:
    """Batch runs of one manifest."""

    configuration: RunConfiguration
    runs: list[BatchRun]

    def to_dict(self) -> dict[str, Any]:
        """Return the results.json content."""
        return {
            "setting": self.configuration.setting,
            "configuration": self.configuration.to_dict(),
            "batches": [run.to_dict() for run in self.runs],
        }

    def metrics(self) -> pd.DataFrame:
        """The metrics table of this run."""
        return lpb_report_table({self.configuration.setting: self.runs})

    def spectra(self) -> pd.DataFrame:
        """One row per grasped leaf: leaf id, transmittance per wavelength, scene id."""
        rows: list[dict[str, Any]] = []
        for run in self.runs:
            for record in run.approaches:
                if record.spectrum is None:
                    continue
                row: dict[str, Any] = {"leaf_id": record.leaf_id}
                for wavelength, value in zip(record.spectrum.wavelengths, record.spectrum.values):
                    row[f"{wavelength:g}"] = value
                row["scene_id"] = run.scene_id
                rows.append(row)
        return pd.DataFrame(rows)


def experiment_scenes(configuration: RunConfiguration) -> list[tuple[str, Scene]]:
    """Load or generate the scenes of a run, with their ids.

    A loaded scene is named after the directory holding its file.
    """
    if configuration.scene_files:
        return [
            (os.path.basename(os.path.dirname(os.path.abspath(path))) or f"scene_{index:04d}", read_scene(path))
            for index, path in enumerate(configuration.scene_files)
        ]
    rng = np.random.default_rng(configuration.seed)
    low, high = configuration.leaves_per_scene
    scenes: list[tuple[str, Scene]] = []
    for index in range(configuration.scene_count):
        n_leaves = int(rng.integers(low, high + 1))
        scene = gen_batch(
            derive_seed(configuration.seed, index),
            n_leaves,
            occlusion_level=configuration.occlusion_level,
            standoff=configuration.standoff,
            camera_to_world=configuration.extrinsic,
            noise_preset=configuration.noise_preset or "none",
        )
        scenes.append((f"scene_{index:04d}", scene))
    return scenes


def run_experiment(configuration: RunConfiguration) -> ExperimentResult:
    """Perceive and process every scene of the manifest, in order."""
    arm = configuration.arm()
    intrinsics = configuration.intrinsics()
    workflow = ManipulationWorkflow(
        arm, configuration.planner, configuration.ik, configuration.grasp, configuration.sensor
    )
    pipeline = PerceptionPipeline()

    runs: list[BatchRun] = []
    for index, (scene_id, scene) in enumerate(experiment_scenes(configuration)):
        rendered = render_scene(scene, intrinsics, configuration.noise_preset)
        report = pipeline.run(rendered.observation, rendered.masks)
        for dropped in report.dropped:
            logger.info("Scene %s: leaf %d dropped (%s)", scene_id, dropped.leaf_id, dropped.reason)
        sway_sigma = NoiseModel.preset(configuration.noise_preset or scene.noise_preset).sway_sigma
        seed = derive_seed(configuration.seed, index, 2)
        runs.append(workflow.run_batch(scene, report, scene.extrinsic, scene_id, seed, sway_sigma))
    return ExperimentResult(configuration, runs)


def write_results(result: ExperimentResult, directory: Optional[str] = None) -> None:
    """Write results.json, metrics.csv and spectra.csv."""
    directory = result.configuration.output_directory if directory is None else directory
    os.makedirs(directory, exist_ok=True)
    write_json(result.to_dict(), os.path.join(directory, RESULTS_FILE))
    result.metrics().to_csv(os.path.join(directory, METRICS_FILE), index=False)
    result.spectra().to_csv(os.path.join(directory, SPECTRA_FILE), index=False)
    for run in result.runs:
        logger.info("Scene %s took %.3f s", run.scene_id, run.wall_time)


def read_results(path: str) -> tuple[str, list[BatchRun]]:
    """Load a results.json file as its setting label and batch runs."""
    data = read_json(path)
    try:
        return str(data.get("setting", "simulation")), [BatchRun.from_dict(run) for run in data["batches"]]
    except (AttributeError, KeyError, TypeError, ValueError) as error:
        raise MalformedInputError(path, f"invalid results: {error}") from error
