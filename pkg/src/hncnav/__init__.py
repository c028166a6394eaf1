"""INS/DVL navigation with neural completion of missing DVL beams."""

from .ekf import ErrorState, FilterState, NoiseConfig, default_initial_cov, predict, update
from .errors import (
    ConfigurationError,
    EstimationError,
    InvalidGeometryError,
    NumericalFailure,
    TrainingDiverged,
    UndefinedMetricError,
    UpdateRejected,
)
from .evaluation import EvaluationReport, evaluate_suite, render_table, vrmse, vrte
from .geometry import BeamGeometry, DvlErrorModel, DvlSample, build_beam_geometry, ls_velocity
from .harness import FilterConfig, FusionOutput, FusionStrategy, run_fusion
from .ins import ImuSample, NavState, apply_error_correction, propagate
from .regressor import THREE_MISSING, TWO_MISSING, MissingPattern, RegressorModel, TrainConfig, train
from .sim import ImuErrorModel, OutageWindow, ScenarioConfig, simulate

__all__ = [
    "BeamGeometry", "ConfigurationError", "DvlErrorModel", "DvlSample", "ErrorState", "EstimationError",
    "EvaluationReport", "FilterConfig", "FilterState", "FusionOutput", "FusionStrategy", "ImuErrorModel",
    "ImuSample", "InvalidGeometryError", "MissingPattern", "NavState", "NoiseConfig", "NumericalFailure",
    "OutageWindow", "RegressorModel", "ScenarioConfig", "THREE_MISSING", "TWO_MISSING", "TrainConfig",
    "TrainingDiverged", "UndefinedMetricError", "UpdateRejected", "apply_error_correction",
    "build_beam_geometry", "default_initial_cov", "evaluate_suite", "ls_velocity", "predict", "propagate",
    "render_table", "run_fusion", "simulate", "train", "update", "vrmse", "vrte",
]
