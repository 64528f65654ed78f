"""Pump scheduling: decoupled MIQP and water-quality-coupled modes."""

from .pwl import LinkPwl, PwlPlan, PwlSegment, pwl_curve, pwl_pipes
from .fits import PowerFit, PumpCurveFit, fit_power, fit_pump_curve, pump_gain, true_power
from .decoupled import (CoupledInfeasible, DecisionVector, ScheduleError, StepProblem, build_decoupled, rebuild,
                        solve_decoupled)
from .coupled import GramianEvaluator, solve_energy_driven, solve_rank_informed, solve_trace_lambda
from .framework import (FrameworkConfig, ScheduleResult, StepRecord, classify_pump_states, head_gain, prepare,
                        run_framework, schedule_csv, schedule_manifest)

__all__ = [
    "PwlSegment", "LinkPwl", "PwlPlan", "pwl_curve", "pwl_pipes",
    "PumpCurveFit", "PowerFit", "fit_pump_curve", "fit_power", "pump_gain", "true_power",
    "DecisionVector", "StepProblem", "ScheduleError", "CoupledInfeasible", "build_decoupled", "rebuild", "solve_decoupled",
    "GramianEvaluator", "solve_rank_informed", "solve_energy_driven", "solve_trace_lambda",
    "FrameworkConfig", "ScheduleResult", "StepRecord", "classify_pump_states", "head_gain", "prepare",
    "run_framework", "schedule_csv", "schedule_manifest",
]
