"""LQR cost evaluation, stability checks and the unstructured Riccati baseline."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from .model import DiscreteDynamics, StateLayout
from .noise import NoiseModel, noise_moments
from .simulate import _gain, linear_rollouts

STABILITY_MARGIN = 1e-9
DEFAULT_PENALTY = 1e6


class UnstabilizableError(RuntimeError):
    """The Riccati iteration failed, so (A, B) looks unstabilizable."""


@dataclass(frozen=True)
class CostWeights:
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("Q must be symmetric positive semidefinite")
        if not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be symmetric positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @classmethod
    def default(cls, layout: StateLayout, angle: float = 0.1, frequency: float = 1.0,
                voltage: float = 1.0, control: float = 0.1) -> "CostWeights":
        """Diagonal weights: angles, speeds, and voltage states (Ve and V)."""
        q = np.zeros(layout.n_state)
        q[layout.delta_g] = q[layout.delta_f] = angle
        q[layout.omega_g] = q[layout.omega_f] = frequency
        q[layout.ve_f] = q[layout.v_f] = voltage
        return cls(np.diag(q), control * np.eye(layout.n_input))


class StabilityCheck(NamedTuple):
    stable: bool
    rho: float


class MCEstimate(NamedTuple):
    mean: float
    stderr: float
    n_diverged: int


def closed_loop(dyn: DiscreteDynamics, K) -> np.ndarray:
    return dyn.A - dyn.B @ _gain(K)


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def is_stabilizing(K, dyn: DiscreteDynamics, margin: float = STABILITY_MARGIN) -> StabilityCheck:
    rho = spectral_radius(closed_loop(dyn, K))
    return StabilityCheck(bool(rho < 1.0 - margin), rho)


@dataclass(frozen=True)
class StationaryStats:
    """Stationary state moments under ``u = -Kx``.

    ``second`` is ``Sigma + mu mu^T + Pi``: the innovation covariance response,
    the deterministic mean, and the response to the per-rollout step offset.
    """

    Sigma: np.ndarray
    mu: np.ndarray
    Pi: np.ndarray

    @property
    def second(self) -> np.ndarray:
        return self.Sigma + np.outer(self.mu, self.mu) + self.Pi


def stationary_stats(Acl: np.ndarray, mean: np.ndarray, W: np.ndarray, S: np.ndarray | None = None) -> StationaryStats:
    n = Acl.shape[0]
    Sigma = solve_discrete_lyapunov(Acl, W)
    Sigma = 0.5 * (Sigma + Sigma.T)
    IA = np.eye(n) - Acl
    mu = np.linalg.solve(IA, mean)
    if S is None or not np.any(S):
        Pi = np.zeros((n, n))
    else:
        T = np.linalg.solve(IA, S)
        Pi = np.linalg.solve(IA, T.T).T
        Pi = 0.5 * (Pi + Pi.T)
    return StationaryStats(Sigma, mu, Pi)


def window_stats(Acl: np.ndarray, mean: np.ndarray, W: np.ndarray, S: np.ndarray | None,
                 T: int) -> StationaryStats:
    """Exact state moments averaged over ``t = 1..T`` from ``x_0 = 0``.

    ``x_{t+1} = Acl x_t + mean + d + e_t`` with a rollout-constant offset
    ``d`` (zero mean, second moment ``S``) and i.i.d. innovations ``e_t``
    (covariance ``W``).  The result is packed like the stationary moments:
    ``Sigma`` holds the averaged covariance and ``Pi`` is zero, so ``second``
    and ``mu`` are the window averages.
    """
    if T < 1:
        raise ValueError("window must be at least one step")
    n = Acl.shape[0]
    # augmented state z = [x; d; 1] propagates as a purely linear recursion
    I = np.eye(n)
    Abar = np.zeros((2 * n + 1, 2 * n + 1))
    Abar[:n, :n] = Acl
    Abar[:n, n:2 * n] = I
    Abar[:n, -1] = mean
    Abar[n:, n:] = np.eye(n + 1)
    Wbar = np.zeros_like(Abar)
    Wbar[:n, :n] = W
    Z = np.zeros_like(Abar)
    if S is not None:
        Z[n:2 * n, n:2 * n] = S
    Z[-1, -1] = 1.0
    acc = np.zeros_like(Abar)
    AbarT = Abar.T
    for _ in range(T):
        Z = Abar @ Z @ AbarT + Wbar
        acc += Z
    acc /= T
    mbar = acc[:n, -1].copy()
    Sigma = acc[:n, :n] - np.outer(mbar, mbar)
    return StationaryStats(0.5 * (Sigma + Sigma.T), mbar, np.zeros((n, n)))


def lqr_cost_analytic(K, dyn: DiscreteDynamics, weights: CostWeights, noise: NoiseModel) -> float:
    """Exact stationary average cost; ``inf`` when ``K`` is not stabilizing."""
    Kmat = _gain(K)
    if not is_stabilizing(Kmat, dyn).stable:
        return math.inf
    mom = noise_moments(noise, weights.Q)
    st = stationary_stats(closed_loop(dyn, Kmat), mom.mean, mom.W, noise.step_second_moment)
    return float(np.trace((weights.Q + Kmat.T @ weights.R @ Kmat) @ st.second))


def _per_rollout_summary(values: np.ndarray, diverged: np.ndarray, penalty: float) -> MCEstimate:
    values = np.where(diverged, penalty, values)
    R = len(values)
    se = float(values.std(ddof=1) / math.sqrt(R)) if R > 1 else math.nan
    return MCEstimate(float(values.mean()), se, int(diverged.sum()))


def lqr_cost_mc(K, dyn: DiscreteDynamics, weights: CostWeights, noise: NoiseModel, T: int = 2000,
                rollouts: int = 200, seed: int = 0, penalty: float = DEFAULT_PENALTY) -> MCEstimate:
    """Monte Carlo time-averaged cost from ``x_0 = 0`` over ``t = 0..T-1``.

    Diverged rollouts contribute ``penalty`` and are counted.
    """
    Kmat = _gain(K)
    x, _, diverged = linear_rollouts(dyn, Kmat, noise, T, rollouts, seed)
    xs = x[:, :T]
    Qeff = weights.Q + Kmat.T @ weights.R @ Kmat
    per = np.einsum("rti,ij,rtj->r", xs, Qeff, xs) / T
    return _per_rollout_summary(per, diverged, penalty)


def dare_baseline(dyn: DiscreteDynamics, weights: CostWeights, tol: float = 1e-12,
                  max_iter: int = 100_000) -> np.ndarray:
    """Unstructured LQR gain by Riccati value iteration from ``P = Q``."""
    A, B, Q, R = dyn.A, dyn.B, weights.Q, weights.R
    P = Q.copy()
    for _ in range(max_iter):
        with np.errstate(over="ignore", invalid="ignore"):
            BtPA = B.T @ P @ A
            P_new = Q + A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA)
            P_new = 0.5 * (P_new + P_new.T)
        if not np.all(np.isfinite(P_new)):
            raise UnstabilizableError("Riccati iteration diverged")
        if np.max(np.abs(P_new - P)) <= tol * max(1.0, np.max(np.abs(P_new))):
            P = P_new
            break
        P = P_new
    else:
        raise UnstabilizableError(f"Riccati iteration did not converge in {max_iter} iterations")
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    if not is_stabilizing(K, dyn).stable:
        raise UnstabilizableError("Riccati fixed point does not stabilize the pair (A, B)")
    return K
