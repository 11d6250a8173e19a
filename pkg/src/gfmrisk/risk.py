"""Mean-variance risk of the state cost and the Lagrangian of the constrained LQR."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .control import (
    DEFAULT_PENALTY,
    CostWeights,
    MCEstimate,
    _per_rollout_summary,
    closed_loop,
    is_stabilizing,
    stationary_stats,
    window_stats,
)
from .model import DiscreteDynamics
from .noise import NoiseMoments, NoiseModel, noise_moments
from .simulate import _gain, linear_rollouts


@dataclass(frozen=True)
class RiskParams:
    """Risk tolerance ``c`` and multiplier bound ``Lambda``."""

    c: float = 0.2
    Lambda: float = 100.0

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("risk tolerance must be non-negative")
        if self.Lambda < 0:
            raise ValueError("multiplier bound must be non-negative")

    def c_bar(self, mom: NoiseMoments, Q) -> float:
        """Tolerance on the quadratic-form risk: ``c - m4 + 4 tr((WQ)^2)``."""
        WQ = mom.W @ np.asarray(Q, dtype=float)
        return float(self.c - mom.m4 + 4.0 * np.trace(WQ @ WQ))


def q_lambda(Q, W, lam: float) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    return Q + 4.0 * lam * (Q @ W @ Q)


class RiskProblem:
    """Cost, risk and Lagrangian evaluator for one (dynamics, weights, noise, risk) tuple.

    ``mode='analytic'`` uses the stationary Lyapunov solution; ``mode='mc'``
    averages simulated rollouts.  With ``window`` set, the analytic mode
    instead averages the exact moments over the first ``window`` steps from
    ``x_0 = 0``, which is where a persistent step load shows its transient.
    Non-stabilizing gains evaluate to the penalty ceiling in every mode.
    """

    def __init__(self, dyn: DiscreteDynamics, weights: CostWeights, noise: NoiseModel,
                 risk: RiskParams | None = None, mode: str = "analytic", penalty: float = DEFAULT_PENALTY,
                 T: int = 2000, rollouts: int = 200, seed: int = 0, window: int | None = None):
        if mode not in ("analytic", "mc"):
            raise ValueError(f"unknown evaluation mode {mode!r}")
        self.dyn, self.weights, self.noise = dyn, weights, noise
        self.risk = risk or RiskParams()
        self.mode, self.penalty = mode, penalty
        self.T, self.rollouts, self.seed = T, rollouts, seed
        if window is not None and window < 1:
            raise ValueError("window must be at least one step")
        self.window = window
        self.moments = noise_moments(noise, weights.Q)
        self.c_bar = self.risk.c_bar(self.moments, weights.Q)
        Q, W = weights.Q, self.moments.W
        self.QWQ = Q @ W @ Q
        self.QM3 = Q @ self.moments.M3
        self._S = noise.step_second_moment

    # -- building blocks ------------------------------------------------
    def stationary(self, K):
        Kmat = _gain(K)
        if not is_stabilizing(Kmat, self.dyn).stable:
            return None
        Acl = closed_loop(self.dyn, Kmat)
        if self.window is not None:
            return window_stats(Acl, self.moments.mean, self.moments.W, self._S, self.window)
        return stationary_stats(Acl, self.moments.mean, self.moments.W, self._S)

    def _terms_analytic(self, K):
        """``(R0, Rc)`` or ``None`` if unstable."""
        Kmat = _gain(K)
        st = self.stationary(Kmat)
        if st is None:
            return None
        X = st.second
        R0 = float(np.trace((self.weights.Q + Kmat.T @ self.weights.R @ Kmat) @ X))
        Rc = float(4.0 * np.trace(self.QWQ @ X) + 4.0 * st.mu @ self.QM3)
        return R0, Rc

    def _terms_mc(self, K):
        Kmat = _gain(K)
        x, _, diverged = linear_rollouts(self.dyn, Kmat, self.noise, self.T, self.rollouts, self.seed)
        if diverged.any():
            return None
        xs = x[:, : self.T]
        Qeff = self.weights.Q + Kmat.T @ self.weights.R @ Kmat
        R0 = float(np.einsum("rti,ij,rtj->", xs, Qeff, xs) / (self.T * self.rollouts))
        xr = x[:, 1:]
        Rc = float((4.0 * np.einsum("rti,ij,rtj->", xr, self.QWQ, xr) + 4.0 * np.einsum("rti,i->", xr, self.QM3))
                   / (self.T * self.rollouts))
        return R0, Rc

    def terms(self, K):
        return self._terms_analytic(K) if self.mode == "analytic" else self._terms_mc(K)

    # -- public evaluations ---------------------------------------------
    def cost(self, K) -> float:
        t = self.terms(K)
        return self.penalty if t is None else t[0]

    def risk_value(self, K) -> float:
        t = self.terms(K)
        return self.penalty if t is None else t[1]

    def lagrangian(self, K, lam: float) -> float:
        """``R0(K) + lam * (Rc(K) - c_bar)``; penalty ceiling when unstable."""
        t = self.terms(K)
        if t is None:
            return self.penalty
        return t[0] + lam * (t[1] - self.c_bar)

    def lagrangian_qlambda(self, K, lam: float) -> float:
        """Same value through ``Q_lambda = Q + 4 lam QWQ`` and the ``4 lam x^T Q M3`` term."""
        Kmat = _gain(K)
        st = self.stationary(Kmat)
        if st is None:
            return self.penalty
        Ql = q_lambda(self.weights.Q, self.moments.W, lam)
        val = np.trace((Ql + Kmat.T @ self.weights.R @ Kmat) @ st.second) + 4.0 * lam * st.mu @ self.QM3
        return float(val - lam * self.c_bar)

    def evaluate(self, K, lam: float):
        """``(value, R0, Rc, stable)`` in one pass."""
        t = self.terms(K)
        if t is None:
            return self.penalty, math.nan, math.nan, False
        return t[0] + lam * (t[1] - self.c_bar), t[0], t[1], True


def risk_value_analytic(K, dyn: DiscreteDynamics, Q, noise: NoiseModel) -> float:
    """Stationary ``4 tr(QWQ (Sigma + mu mu^T + Pi)) + 4 mu^T Q M3``; ``inf`` if unstable."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    Kmat = _gain(K)
    R = np.eye(Kmat.shape[0])
    t = RiskProblem(dyn, CostWeights(Q, R), noise)._terms_analytic(Kmat)
    return math.inf if t is None else t[1]


def risk_value_mc(K, dyn: DiscreteDynamics, Q, noise: NoiseModel, T: int = 2000, rollouts: int = 200,
                  seed: int = 0, penalty: float = DEFAULT_PENALTY) -> MCEstimate:
    """Monte Carlo average of ``4 x^T QWQ x + 4 x^T Q M3`` over ``t = 1..T``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    mom = noise_moments(noise, Q)
    QWQ, QM3 = Q @ mom.W @ Q, Q @ mom.M3
    x, _, diverged = linear_rollouts(dyn, _gain(K), noise, T, rollouts, seed)
    xr = x[:, 1:]
    per = (4.0 * np.einsum("rti,ij,rtj->r", xr, QWQ, xr) + 4.0 * np.einsum("rti,i->r", xr, QM3)) / T
    return _per_rollout_summary(per, diverged, penalty)


def risk_definition_mc(K, dyn: DiscreteDynamics, Q, noise: NoiseModel, T: int = 2000, rollouts: int = 200,
                       seed: int = 0, penalty: float = DEFAULT_PENALTY) -> MCEstimate:
    """Monte Carlo average of the squared one-step surprise of the state cost.

    Given the history up to ``t-1`` the state is ``x_t = m_t + e`` with the
    prediction ``m_t = A x_{t-1} + B u_{t-1} + mean + d`` (``d`` the rollout's
    step offset), so ``E[x_t^T Q x_t | H_t] = m_t^T Q m_t + tr(QW)``.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    Kmat = _gain(K)
    mom = noise_moments(noise, Q)
    x, d, diverged = linear_rollouts(dyn, Kmat, noise, T, rollouts, seed)
    Acl = closed_loop(dyn, Kmat)
    m = x[:, :-1] @ Acl.T + (mom.mean + d)[:, None, :]
    xt = x[:, 1:]
    realized = np.einsum("rti,ij,rtj->rt", xt, Q, xt)
    predicted = np.einsum("rti,ij,rtj->rt", m, Q, m) + np.trace(Q @ mom.W)
    per = ((realized - predicted) ** 2).mean(axis=1)
    return _per_rollout_summary(per, diverged, penalty)


def lagrangian(K, lam: float, dyn: DiscreteDynamics, weights: CostWeights, noise: NoiseModel,
               risk: RiskParams, mode: str = "analytic") -> float:
    if not 0.0 <= lam <= risk.Lambda:
        raise ValueError(f"multiplier {lam} outside [0, {risk.Lambda}]")
    return RiskProblem(dyn, weights, noise, risk, mode=mode).lagrangian(K, lam)
