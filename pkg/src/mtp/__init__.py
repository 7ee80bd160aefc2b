"""Multi-hypothesis tracking and trajectory prediction with tracking-error evaluation."""

from __future__ import annotations

from .assignment import FORBIDDEN, Assignment, CostMatrix, hungarian, murty_h_best
from .evaluation import ErrorEvent, MetricsReport, classify_errors, evaluate, min_ade, min_fde
from .geometry import Box3D, iou3d
from .pipeline import RunResult, run_pipeline
from .prediction import PredictionSet, TrajectorySample, kmeanspp_sample, pool_predictions, predict_cv
from .scenario import Detection, GtTrajectory, Scenario, load_scenario, save_scenario
from .tracker import Hypothesis, PipelineConfig, Tracklet, step_multi, step_single

__version__ = "0.1.0"

__all__ = [
    "FORBIDDEN", "Assignment", "CostMatrix", "hungarian", "murty_h_best",
    "ErrorEvent", "MetricsReport", "classify_errors", "evaluate", "min_ade", "min_fde",
    "Box3D", "iou3d", "RunResult", "run_pipeline",
    "PredictionSet", "TrajectorySample", "kmeanspp_sample", "pool_predictions", "predict_cv",
    "Detection", "GtTrajectory", "Scenario", "load_scenario", "save_scenario",
    "Hypothesis", "PipelineConfig", "Tracklet", "step_multi", "step_single",
]
