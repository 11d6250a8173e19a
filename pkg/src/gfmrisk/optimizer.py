"""Zero-order policy gradients and stochastic gradient descent with a max-oracle."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .control import (
    DEFAULT_PENALTY,
    CostWeights,
    UnstabilizableError,
    dare_baseline,
    is_stabilizing,
    spectral_radius,
)
from .model import DiscreteDynamics
from .policy import GainMask, Policy, project_to_mask
from .risk import RiskProblem

log = logging.getLogger(__name__)

TIE_TOL = 1e-12
FLAGGED_WARN_FRACTION = 0.10


class InitializationError(RuntimeError):
    """No stabilizing structured policy could be found."""


@dataclass(frozen=True)
class TrainingConfig:
    r: float = 0.1
    eta: float = 1e-4
    M: int = 50
    N: int = 100
    Lambda: float = 100.0
    penalty: float = DEFAULT_PENALTY
    seed: int = 0
    antithetic: bool = False

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError("smoothing radius must be positive")
        if self.eta < 0:
            raise ValueError("step size must be non-negative")
        if self.M < 1 or self.N < 1:
            raise ValueError("M and N must be at least 1")
        if self.Lambda < 0:
            raise ValueError("multiplier bound must be non-negative")
        if self.penalty <= 0:
            raise ValueError("penalty ceiling must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TraceRecord:
    iteration: int
    objective: float
    lam_fraction: float
    slack: float
    grad_norm: float
    rho: float
    flagged: int
    step: str


@dataclass
class TrainingTrace:
    records: list[TraceRecord] = field(default_factory=list)
    final_objective: float = float("nan")
    final_slack: float = float("nan")
    final_rho: float = float("nan")
    gains: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective", "lambda_fraction", "slack", "grad_norm", "spectral_radius",
                        "flagged", "step"])
            for r in self.records:
                w.writerow([r.iteration, repr(r.objective), repr(r.lam_fraction), repr(r.slack),
                            repr(r.grad_norm), repr(r.rho), r.flagged, r.step])


def sample_perturbation(mask: GainMask, rng) -> np.ndarray:
    """Uniform direction on the unit Frobenius sphere of the masked entries."""
    if mask.nnz < 1:
        raise ValueError("cannot perturb an empty mask")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    z = rng.standard_normal(mask.nnz)
    U = np.zeros(mask.shape)
    U[mask.matrix] = z / np.linalg.norm(z)
    return U


def max_oracle(K, problem: RiskProblem, Lambda: float) -> float:
    """Maximizing multiplier of the affine-in-lambda Lagrangian: ``Lambda`` iff the risk exceeds its bound."""
    return _oracle_eval(K, problem, Lambda)[0]


def _oracle_eval(K, problem: RiskProblem, Lambda: float):
    """``(lam', value, Rc, stable)`` with one model evaluation."""
    _, R0, Rc, stable = problem.evaluate(K, 0.0)
    if not stable:
        return Lambda, problem.penalty, np.nan, False
    lam = Lambda if Rc - problem.c_bar > TIE_TOL else 0.0
    return lam, R0 + lam * (Rc - problem.c_bar), Rc, True


def zopg(K, U, r: float, lam: float, problem: RiskProblem):
    """One-point estimate ``(n_K / r) L(K + rU, lam) U``.

    Returns ``(G, value, flagged)``; ``flagged`` marks a non-stabilizing
    perturbed gain whose value was replaced by the penalty ceiling.
    """
    Kmat = K.K if isinstance(K, Policy) else np.asarray(K, dtype=float)
    nK = int(np.count_nonzero(U)) if not isinstance(K, Policy) else K.mask.nnz
    value, _, _, stable = problem.evaluate(Kmat + r * U, lam)
    return (nK / r) * value * U, value, not stable


def sgdmax(K0: Policy, cfg: TrainingConfig, problem: RiskProblem):
    """Run ``cfg.M`` outer iterations; return the final policy and its trace.

    Each iteration averages ``cfg.N`` ZOPG draws, each with its own
    max-oracle multiplier at the perturbed gain.  A step that leaves the
    stabilizing set is retried once at half the step size and skipped if it
    still does.
    """
    dyn = problem.dyn
    if not is_stabilizing(K0, dyn).stable:
        raise InitializationError("initial policy is not stabilizing")
    mask = K0.mask
    nK = mask.nnz
    K = K0.K.copy()
    trace = TrainingTrace()
    total_flagged = 0
    for m in range(cfg.M):
        lam_it, obj, Rc, _ = _oracle_eval(K, problem, cfg.Lambda)
        G = np.zeros_like(K)
        n_lam = 0
        flagged = 0
        for s in range(cfg.N):
            rng = np.random.default_rng([cfg.seed, m, s])
            U = sample_perturbation(mask, rng)
            lam_p, val_p, _, ok_p = _oracle_eval(K + cfg.r * U, problem, cfg.Lambda)
            n_lam += lam_p > 0
            flagged += not ok_p
            if cfg.antithetic:
                lam_m, val_m, _, ok_m = _oracle_eval(K - cfg.r * U, problem, cfg.Lambda)
                flagged += not ok_m
                G += (nK / (2 * cfg.r)) * (val_p - val_m) * U
            else:
                G += (nK / cfg.r) * val_p * U
        G /= cfg.N
        total_flagged += flagged
        step = "ok"
        K_new = K - cfg.eta * G
        if not is_stabilizing(K_new, dyn).stable:
            K_new = K - 0.5 * cfg.eta * G
            step = "halved"
            if not is_stabilizing(K_new, dyn).stable:
                K_new = K
                step = "skipped"
        trace.records.append(TraceRecord(
            iteration=m,
            objective=float(obj),
            lam_fraction=n_lam / cfg.N,
            slack=float(Rc - problem.c_bar),
            grad_norm=float(np.linalg.norm(G)),
            rho=spectral_radius(dyn.A - dyn.B @ K),
            flagged=flagged,
            step=step,
        ))
        trace.gains.append(K.copy())
        K = np.where(mask.matrix, K_new, 0.0)
    draws = cfg.M * cfg.N * (2 if cfg.antithetic else 1)
    if total_flagged > FLAGGED_WARN_FRACTION * draws:
        log.warning("%d of %d perturbed gains were not stabilizing; consider a smaller radius r",
                    total_flagged, draws)
    _, obj, Rc, _ = _oracle_eval(K, problem, cfg.Lambda)
    trace.final_objective = float(obj)
    trace.final_slack = float(Rc - problem.c_bar)
    trace.final_rho = spectral_radius(dyn.A - dyn.B @ K)
    trace.gains.append(K.copy())
    return Policy(K, mask), trace


def find_initial_policy(dyn: DiscreteDynamics, mask: GainMask, weights: CostWeights | None = None) -> Policy:
    """A stabilizing mask-conforming starting gain.

    Zero if the open loop is stable; otherwise the Riccati gain projected onto
    the mask, scaled down by the largest factor in ``(0, 1]`` that still
    stabilizes (found by a grid scan and then bisection).
    """
    zero = Policy(np.zeros(mask.shape), mask)
    if is_stabilizing(zero, dyn).stable:
        return zero
    if weights is None:
        weights = CostWeights(np.eye(dyn.n_state), np.eye(dyn.n_input))
    try:
        K_dare = dare_baseline(dyn, weights)
    except UnstabilizableError as exc:
        raise InitializationError(f"no Riccati gain to start from: {exc}") from exc
    K_proj = project_to_mask(K_dare, mask).K

    def ok(g):
        return is_stabilizing(g * K_proj, dyn).stable

    if ok(1.0):
        return Policy(K_proj, mask)
    grid = np.linspace(1.0, 0.0, 201)[1:-1]
    hit = next((g for g in grid if ok(g)), None)
    if hit is None:
        raise InitializationError(
            "no stabilizing structured gain found along the projected Riccati gain; "
            "add communication links between the GFMs and the generators"
        )
    lo, hi = hit, hit + (grid[0] - grid[1])
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return Policy(lo * K_proj, mask)
