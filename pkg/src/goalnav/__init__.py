"""Object-goal navigation kernel: exploration memory, decision pipeline,
recovery state machine, deterministic gridworld harness, and metrics."""

from .episode import (
    EpisodeResult,
    EpisodeSpec,
    RunConfig,
    Toggles,
    compute_spl,
    compute_sr,
    run_ablation,
    run_episode,
)
from .geometry import CameraModel, GridCoord, PolarAction, Pose
from .perception import GoalBundle, ScriptedOracle
from .recovery import PhaseGoal
from .scenegen import GenParams, generate_scene, generate_suite
from .simworld import SceneSpec, load_scene, save_scene

__version__ = "0.1.0"

__all__ = [
    "CameraModel",
    "EpisodeResult",
    "EpisodeSpec",
    "GenParams",
    "GoalBundle",
    "GridCoord",
    "PhaseGoal",
    "PolarAction",
    "Pose",
    "RunConfig",
    "SceneSpec",
    "ScriptedOracle",
    "Toggles",
    "compute_spl",
    "compute_sr",
    "generate_scene",
    "generate_suite",
    "load_scene",
    "run_ablation",
    "run_episode",
    "save_scene",
    "__version__",
]
