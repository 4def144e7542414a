"""Leaf grasping from RGB-D observations: perception, arm motion planning and LPB metrics."""

from leafgrasp.__version__ import __version__
from leafgrasp.collision import CollisionScene, collides
from leafgrasp.geometry import CameraIntrinsics, Pose, Transform, UnitQuat
from leafgrasp.kinematics import ArmModel, IKConfiguration, fk, jacobian, solve_ik
from leafgrasp.metrics import LPBReport, lpb_metrics
from leafgrasp.perception import PerceptionPipeline, PerceptionReport, PoseSet, perceive
from leafgrasp.planning import Path, PlannerConfig, RRTConnectPlanner, plan_rrtc, shortcut
from leafgrasp.scenegen import NoiseModel, Scene, gen_batch, gen_leaf, render
from leafgrasp.spectral import SpectralSample, SpectralSensorConfiguration, acquire_spectrum
from leafgrasp.workflow import BatchRun, GraspConfiguration, ManipulationWorkflow, grasp_check, run_batch, to_base_frame

__all__ = [
    "__version__",
    "ArmModel",
    "BatchRun",
    "CameraIntrinsics",
    "CollisionScene",
    "GraspConfiguration",
    "IKConfiguration",
    "LPBReport",
    "ManipulationWorkflow",
    "NoiseModel",
    "Path",
    "PerceptionPipeline",
    "PerceptionReport",
    "PlannerConfig",
    "Pose",
    "PoseSet",
    "RRTConnectPlanner",
    "Scene",
    "SpectralSample",
    "SpectralSensorConfiguration",
    "Transform",
    "UnitQuat",
    "acquire_spectrum",
    "collides",
    "fk",
    "gen_batch",
    "gen_leaf",
    "grasp_check",
    "jacobian",
    "lpb_metrics",
    "perceive",
    "plan_rrtc",
    "render",
    "run_batch",
    "shortcut",
    "solve_ik",
    "to_base_frame",
]
