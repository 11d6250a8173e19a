"""Experiment protocol: train structured policies, test them against the Riccati baseline on load-step suites.

Output files written to an output directory:

- ``policy_<name>.json``: gains (see :mod:`gfmrisk.policy`)
- ``trace_<mode>.csv``: one row per training iteration
- ``objectives_<level>.csv``: per-scenario disturbances and realized objectives
  (``nan`` marks a diverged scenario)
- ``frequency_<level>_<policy>.csv``: speed deviations of every node in that
  policy's worst scenario
- ``summary.json``: run summary, byte-for-byte reproducible from the inputs
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .case import CaseModel
from .control import dare_baseline
from .optimizer import TrainingConfig, TrainingTrace, find_initial_policy, sgdmax
from .policy import GainMask, Policy, save_gain
from .risk import RiskParams, RiskProblem
from .simulate import _gain, frequency_deviations, simulate_batch

log = logging.getLogger(__name__)

LEVELS = {"low": 0.5, "high": 1.0}
MODES = ("gfm", "gfm-risk")
POLICY_ORDER = ("baseline", "gfm", "gfm-risk")
_PURPOSE = {"train": 0, "test": 1}
_LEVEL_KEY = {"low": 0, "high": 1}


def derive_seed(base: int, purpose: str, *keys: int) -> int:
    """Child seed for one purpose; training and testing use disjoint spawn keys."""
    ss = np.random.SeedSequence(int(base), spawn_key=(_PURPOSE[purpose], *map(int, keys)))
    return int(ss.generate_state(1, np.uint64)[0])


# -- scenarios ---------------------------------------------------------------
@dataclass(frozen=True)
class ScenarioSuite:
    """Persistent load steps at ``t = 0``, one row per scenario and column per GFM bus."""

    level_name: str
    level: float
    seed: int
    dP: np.ndarray
    dQ: np.ndarray

    @property
    def count(self) -> int:
        return self.dP.shape[0]


def gen_scenarios(level: str, count: int = 100, seed: int = 0, n_gfm: int = 1,
                  q_ratio: float = 0.2) -> ScenarioSuite:
    """Uniform active-load steps on ``[-level, level]`` pu at every GFM bus; ``dQ = q_ratio * dP``."""
    if level not in LEVELS:
        raise ValueError(f"level must be one of {sorted(LEVELS)}, got {level!r}")
    if count < 1:
        raise ValueError("scenario count must be positive")
    amp = LEVELS[level]
    dP = np.random.default_rng(seed).uniform(-amp, amp, size=(count, n_gfm))
    return ScenarioSuite(level, amp, int(seed), dP, q_ratio * dP)


# -- statistics --------------------------------------------------------------
@dataclass(frozen=True)
class Summary:
    """Order statistics use linear interpolation between order statistics; variance is the population variance."""

    count: int
    n_diverged: int
    median: float
    q1: float
    q3: float
    min: float
    max: float
    variance: float

    @classmethod
    def of(cls, values) -> "Summary":
        v = np.asarray(values, dtype=float)
        ok = v[np.isfinite(v)]
        if ok.size == 0:
            nan = math.nan
            return cls(len(v), len(v), nan, nan, nan, nan, nan, nan)
        q1, med, q3 = np.percentile(ok, [25, 50, 75], method="linear")
        return cls(len(v), int(len(v) - ok.size), float(med), float(q1), float(q3), float(ok.min()),
                   float(ok.max()), float(ok.var()))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunReport:
    policy: str
    level: str
    objectives: np.ndarray
    diverged: np.ndarray
    summary: Summary
    worst: int
    worst_time: np.ndarray = field(repr=False)
    worst_frequency: np.ndarray = field(repr=False)


def realized_objectives(x: np.ndarray, u: np.ndarray, Q: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Time average of ``x^T Q x + u^T R u`` over the control steps of each scenario."""
    xs = x[:, : u.shape[1]]
    steps = u.shape[1]
    return (np.einsum("sti,ij,stj->s", xs, Q, xs) + np.einsum("sti,ij,stj->s", u, R, u)) / steps


def summarize(reports) -> list[dict]:
    """One row per (level, policy) with the summary statistics."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to summarize")
    rows = []
    for rep in reports:
        rows.append({"level": rep.level, "policy": rep.policy, **rep.summary.to_dict()})
    return rows


def format_table(rows) -> str:
    cols = ["level", "policy", "median", "q1", "q3", "min", "max", "variance", "n_diverged"]
    out = [cols]
    for r in rows:
        out.append([r["level"], r["policy"], *(f"{r[c]:.6g}" for c in cols[2:8]), str(r["n_diverged"])])
    widths = [max(len(row[i]) for row in out) for i in range(len(cols))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in out)


# -- training ----------------------------------------------------------------
def training_problem(cm: CaseModel, mode: str, cfg: TrainingConfig) -> RiskProblem:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    Lambda = 0.0 if mode == "gfm" else cfg.Lambda
    return RiskProblem(cm.system.discrete, cm.weights, cm.noise, RiskParams(cm.risk.c, Lambda),
                       penalty=cfg.penalty, window=cm.window)


def run_training(cm: CaseModel, mode: str, cfg: TrainingConfig | None = None, seed: int = 0,
                 out_dir=None) -> tuple[Policy, TrainingTrace]:
    """Train one structured policy from the initial policy; ``gfm`` turns the risk constraint off."""
    cfg = cfg or cm.training
    cfg = replace(cfg, seed=derive_seed(seed, "train"), Lambda=0.0 if mode == "gfm" else cfg.Lambda)
    problem = training_problem(cm, mode, cfg)
    K0 = find_initial_policy(cm.system.discrete, cm.mask)
    log.info("training %s: %d iterations x %d samples", mode, cfg.M, cfg.N)
    policy, trace = sgdmax(K0, cfg, problem)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_gain(policy, out / f"policy_{mode}.json")
        trace.to_csv(out / f"trace_{mode}.csv")
    return policy, trace


def baseline_policy(cm: CaseModel) -> Policy:
    """Unstructured Riccati gain for the case weights, carried on the all-links mask."""
    K = dare_baseline(cm.system.discrete, cm.weights)
    return Policy(K, GainMask.full(cm.layout))


# -- testing -----------------------------------------------------------------
def run_testing(cm: CaseModel, policies: dict, suite: ScenarioSuite, out_dir=None,
                horizon: float = 6.0) -> dict[str, RunReport]:
    """Simulate every scenario of ``suite`` on the nonlinear model under each policy."""
    system = cm.system
    L = system.layout
    reports = {}
    for name, pol in policies.items():
        K = _gain(pol)
        if K.shape != (L.n_input, L.n_state):
            raise ValueError(f"policy {name!r} has shape {K.shape}, expected {(L.n_input, L.n_state)}")
        res = simulate_batch(system, K, suite.dP, suite.dQ, 0.0, horizon)
        J = realized_objectives(res.x, res.u, cm.weights.Q, cm.weights.R)
        J[res.diverged] = math.nan
        if res.diverged.any():
            log.warning("%s: %d of %d %s-level scenarios diverged", name, int(res.diverged.sum()),
                        suite.count, suite.level_name)
        finite = np.where(np.isfinite(J), J, -np.inf)
        worst = int(np.argmax(finite)) if np.isfinite(J).any() else 0
        freq = frequency_deviations(res.trajectory(worst), system)
        reports[name] = RunReport(name, suite.level_name, J, res.diverged.copy(), Summary.of(J), worst,
                                  res.t, freq)
    if out_dir is not None:
        write_objectives(Path(out_dir) / f"objectives_{suite.level_name}.csv", suite, reports)
        for name, rep in reports.items():
            write_frequency(Path(out_dir) / f"frequency_{suite.level_name}_{name}.csv", rep, L.n_sg)
    return reports


def write_objectives(path, suite: ScenarioSuite, reports: dict[str, RunReport]) -> None:
    n_gfm = suite.dP.shape[1]
    names = list(reports)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", *(f"dP_{j}" for j in range(n_gfm)), *(f"dQ_{j}" for j in range(n_gfm)), *names])
        for s in range(suite.count):
            w.writerow([s, *map(repr, map(float, suite.dP[s])), *map(repr, map(float, suite.dQ[s])),
                        *(repr(float(reports[n].objectives[s])) for n in names)])


def read_objectives(path) -> tuple[str, dict[str, np.ndarray]]:
    """Per-policy objective columns of an ``objectives_<level>.csv`` file."""
    path = Path(path)
    level = path.stem.split("_", 1)[1]
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    names = [h for h in header[1:] if not h.startswith(("dP_", "dQ_"))]
    cols = {n: np.array([float(r[header.index(n)]) for r in body]) for n in names}
    return level, cols


def write_frequency(path, rep: RunReport, n_sg: int) -> None:
    n = rep.worst_frequency.shape[1]
    labels = [f"omega_sg{i}" if i < n_sg else f"omega_gfm{i - n_sg}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", *labels])
        for t, row in zip(rep.worst_time, rep.worst_frequency):
            w.writerow([repr(float(t)), *map(repr, map(float, row))])


# -- full experiment -----------------------------------------------------------
@dataclass
class ExperimentResult:
    policies: dict
    traces: dict
    reports: dict  # level -> policy -> RunReport
    summary: dict


def run_experiment(cm: CaseModel, cfg: TrainingConfig | None = None, seed: int = 0,
                   levels=("low", "high"), count: int = 100, out_dir=None) -> ExperimentResult:
    """Train both modes, then test Baseline, GFM and GFM-Risk on every level."""
    cfg = cfg or cm.training
    policies = {"baseline": baseline_policy(cm)}
    traces = {}
    for mode in MODES:
        policies[mode], traces[mode] = run_training(cm, mode, cfg, seed, out_dir)
    if out_dir is not None:
        save_gain(policies["baseline"], Path(out_dir) / "policy_baseline.json")
    reports = {}
    for level in levels:
        suite = scenario_suite(cm, level, count, seed)
        reports[level] = run_testing(cm, policies, suite, out_dir)
    summary = run_summary(cm, cfg, seed, traces, reports)
    if out_dir is not None:
        write_summary(Path(out_dir) / "summary.json", summary)
    return ExperimentResult(policies, traces, reports, summary)


def scenario_suite(cm: CaseModel, level: str, count: int = 100, seed: int = 0) -> ScenarioSuite:
    return gen_scenarios(level, count, derive_seed(seed, "test", _LEVEL_KEY[level]), cm.layout.n_gfm,
                         cm.case.noise.q_ratio)


def run_summary(cm: CaseModel, cfg: TrainingConfig, seed: int, traces: dict, reports: dict) -> dict:
    training = {}
    for mode, tr in traces.items():
        training[mode] = {
            "initial_objective": float(tr.records[0].objective) if tr.records else math.nan,
            "final_objective": tr.final_objective,
            "final_slack": tr.final_slack,
            "final_spectral_radius": tr.final_rho,
            "lambda_switching": bool(len({r.lam_fraction > 0 for r in tr.records}) > 1),
        }
    testing = {level: {name: rep.summary.to_dict() for name, rep in reps.items()} for level, reps in reports.items()}
    cfg_doc = cfg.to_dict()
    cfg_doc.pop("seed")
    return {
        "case": cm.case.name,
        "seed": int(seed),
        "training_config": cfg_doc,
        "risk": {"c": cm.risk.c, "Lambda": cm.risk.Lambda},
        "training": training,
        "testing": testing,
    }


def write_summary(path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, indent=1, sort_keys=True, allow_nan=True) + "\n")
