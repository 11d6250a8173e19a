"""Risk-constrained structured feedback for grid-forming inverters in SG/GFM power systems."""
from .case import CaseError, CaseFile, CaseModel, build_case, load_case, save_case
from .control import CostWeights, dare_baseline, is_stabilizing, lqr_cost_analytic, lqr_cost_mc
from .harness import ScenarioSuite, gen_scenarios, run_experiment, run_testing, run_training, summarize
from .model import PowerSystem, StateLayout
from .network import GfmParams, ReducedNetwork, SgParams, admittance_matrix, kron_reduce
from .noise import NoiseModel, noise_moments
from .optimizer import TrainingConfig, find_initial_policy, sgdmax, zopg
from .policy import GainMask, Policy, build_mask, load_gain, save_gain
from .risk import RiskParams, RiskProblem, lagrangian
from .simulate import LoadDisturbance, simulate_linear, simulate_nonlinear

__version__ = "0.1.0"

__all__ = [
    "CaseError",
    "CaseFile",
    "CaseModel",
    "build_case",
    "load_case",
    "save_case",
    "CostWeights",
    "dare_baseline",
    "is_stabilizing",
    "lqr_cost_analytic",
    "lqr_cost_mc",
    "ScenarioSuite",
    "gen_scenarios",
    "run_experiment",
    "run_testing",
    "run_training",
    "summarize",
    "PowerSystem",
    "StateLayout",
    "GfmParams",
    "ReducedNetwork",
    "SgParams",
    "admittance_matrix",
    "kron_reduce",
    "NoiseModel",
    "noise_moments",
    "TrainingConfig",
    "find_initial_policy",
    "sgdmax",
    "zopg",
    "GainMask",
    "Policy",
    "build_mask",
    "load_gain",
    "save_gain",
    "RiskParams",
    "RiskProblem",
    "lagrangian",
    "LoadDisturbance",
    "simulate_linear",
    "simulate_nonlinear",
]
