"""Two-stage GNSS-inertial initialization.

Relative GNSS terms constrain the trajectory until the extrinsic Hessian is
well conditioned; absolute terms and the GNSS-to-inertial transform are then
switched on.
"""
from .manifold import Pose, exp_se3, exp_so3, log_se3, log_so3, s2_boxminus, s2_boxplus
from .pipeline import PipelineConfig, TwoStageResult, associate, run_fixed_activation, run_incremental, run_naive, run_two_stage
from .preintegration import ImuNoiseModel, ImuSample, PreintegratedImu, integrate
from .residuals import GnssMeasurement, InitState, KeyframeState, assemble_cost
from .simulation import SensorConfig, TrajectoryModel, ate_rmse, generate, urban_like
from .solver import SolverOptions, solve, solve_state
from .trigger import TriggerTrace, extrinsic_hessian, update_trigger

__all__ = [
    "GnssMeasurement",
    "ImuNoiseModel",
    "ImuSample",
    "InitState",
    "KeyframeState",
    "PipelineConfig",
    "Pose",
    "PreintegratedImu",
    "SensorConfig",
    "SolverOptions",
    "TrajectoryModel",
    "TriggerTrace",
    "TwoStageResult",
    "assemble_cost",
    "associate",
    "ate_rmse",
    "exp_se3",
    "exp_so3",
    "extrinsic_hessian",
    "generate",
    "integrate",
    "log_se3",
    "log_so3",
    "run_fixed_activation",
    "run_incremental",
    "run_naive",
    "run_two_stage",
    "s2_boxminus",
    "s2_boxplus",
    "solve",
    "solve_state",
    "update_trigger",
    "urban_like",
]
