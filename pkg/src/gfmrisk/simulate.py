"""Closed-loop simulators: the discrete linear model and the nonlinear SG/GFM system."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import DiscreteDynamics, PowerSystem
from .network import pf_injections
from .noise import NoiseModel
from .policy import Policy

BLOWUP_NORM = 1e6


class DivergenceError(RuntimeError):
    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


def _gain(K) -> np.ndarray:
    if isinstance(K, Policy):
        return K.K
    return np.atleast_2d(np.asarray(K, dtype=float))


def rollout_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for rollout ``index`` under base ``seed``."""
    return np.random.default_rng([int(seed), int(index)])


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray

    def to_csv(self, path, state_labels=None, input_labels=None) -> None:
        n, m = self.x.shape[1], self.u.shape[1]
        state_labels = state_labels or [f"x{i}" for i in range(n)]
        input_labels = input_labels or [f"u{i}" for i in range(m)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", *state_labels, *input_labels])
            for k in range(len(self.t)):
                u = self.u[k] if k < len(self.u) else np.full(m, np.nan)
                w.writerow([repr(float(self.t[k])), *map(repr, map(float, self.x[k])), *map(repr, map(float, u))])


class Rollouts(NamedTuple):
    x: np.ndarray  # (rollouts, T+1, n)
    offset: np.ndarray  # (rollouts, n) step offset held over each rollout
    diverged: np.ndarray


def linear_rollouts(dyn: DiscreteDynamics, K, noise: NoiseModel, T: int, rollouts: int, seed: int,
                    x0=None) -> Rollouts:
    """Batched rollouts of ``x_{t+1} = (A - BK) x_t + xi_t``.

    Rollout ``i`` draws from ``rollout_rng(seed, i)``: first its step offset,
    then ``T`` innovations.  Diverged rollouts are frozen at zero after the
    blow-up step.
    """
    if T < 1:
        raise ValueError("horizon must be at least one step")
    Kmat = _gain(K)
    Acl = dyn.A - dyn.B @ Kmat
    n = dyn.n_state
    offset = np.zeros((rollouts, n))
    xi = np.zeros((rollouts, T, n))
    for i in range(rollouts):
        rng = rollout_rng(seed, i)
        offset[i] = noise.sample_offset(rng)
        xi[i] = offset[i] + noise.sample_innovations(rng, T)
    x = np.zeros((rollouts, T + 1, n))
    if x0 is not None:
        x[:, 0] = np.asarray(x0, dtype=float)
    diverged = np.zeros(rollouts, dtype=bool)
    AclT = Acl.T
    for t in range(T):
        nxt = x[:, t] @ AclT + xi[:, t]
        bad = ~np.isfinite(nxt).all(axis=1) | (np.abs(nxt).max(axis=1) > BLOWUP_NORM)
        if bad.any():
            diverged |= bad
        nxt[diverged] = 0.0
        x[:, t + 1] = nxt
    return Rollouts(x, offset, diverged)


def simulate_linear(dyn: DiscreteDynamics, K, noise: NoiseModel, x0, T: int, seed: int = 0) -> Trajectory:
    if isinstance(K, Policy):
        Kmat = K.K
    else:
        Kmat = _gain(K)
    if Kmat.shape != (dyn.n_input, dyn.n_state):
        raise ValueError(f"gain must be {dyn.n_input}x{dyn.n_state}")
    x, _, diverged = linear_rollouts(dyn, Kmat, noise, T, 1, seed, x0=x0)
    if diverged[0]:
        raise DivergenceError("linear rollout diverged", float("nan"))
    x = x[0]
    u = -x[:-1] @ Kmat.T
    return Trajectory(np.arange(T + 1) * dyn.dt, x, u)


@dataclass(frozen=True)
class LoadDisturbance:
    """Step changes of active/reactive load at the GFM buses."""

    dP: np.ndarray
    dQ: np.ndarray
    onset: float = 0.0

    def __post_init__(self):
        if self.onset < 0:
            raise ValueError("disturbance onset must be non-negative")
        object.__setattr__(self, "dP", np.asarray(self.dP, dtype=float))
        object.__setattr__(self, "dQ", np.asarray(self.dQ, dtype=float))


@dataclass
class NonlinearResult:
    """Batched nonlinear simulation output at the control rate."""

    t: np.ndarray
    x: np.ndarray  # (S, steps+1, n)
    u: np.ndarray  # (S, steps, m)
    diverged: np.ndarray
    blowup_time: np.ndarray

    def trajectory(self, s: int = 0) -> Trajectory:
        return Trajectory(self.t, self.x[s], self.u[s])


class _Rhs:
    """Deviation-coordinate right-hand side of the SG/GFM equations."""

    def __init__(self, system: PowerSystem, linearized: bool):
        L = system.layout
        op = system.operating_point
        self.L, self.net, self.linearized = L, system.net, linearized
        self.delta0 = op.delta
        self.V0 = op.V
        self.Pmech = op.sg_power
        self.Pset0 = op.gfm_p_set
        self.Vset0 = np.array([g.V_set for g in system.gfm])
        self.Qset0 = np.array([g.Q_set for g in system.gfm])
        self.M = np.array([p.M for p in system.sg])
        self.D = np.array([p.D for p in system.sg])
        self.tau = np.array([g.tau for g in system.gfm])
        self.mp = np.array([g.mp for g in system.gfm])
        self.mq = np.array([g.mq for g in system.gfm])
        self.kpv = np.array([g.kpv for g in system.gfm])
        self.kiv = np.array([g.kiv for g in system.gfm])
        if linearized:
            self.Ac = system.continuous.Ac
            self.Bc = system.continuous.Bc
            self.E = system.load_input

    def __call__(self, x, u, dP, dQ):
        if self.linearized:
            return x @ self.Ac.T + u @ self.Bc.T + np.concatenate([dP, dQ], axis=1) @ self.E.T
        L = self.L
        ng = L.n_sg
        delta = self.delta0 + np.concatenate([x[:, L.delta_g], x[:, L.delta_f]], axis=1)
        V = np.broadcast_to(self.V0, delta.shape).copy()
        V[:, ng:] += x[:, L.v_f]
        P, Q = pf_injections(delta, V, self.net)
        Pf = P[:, ng:] + dP
        Qf = Q[:, ng:] + dQ
        dx = np.empty_like(x)
        wg, wf, ve = x[:, L.omega_g], x[:, L.omega_f], x[:, L.ve_f]
        dx[:, L.delta_g] = wg
        dx[:, L.omega_g] = (-self.D * wg + self.Pmech - P[:, :ng]) / self.M
        dx[:, L.delta_f] = wf
        dx[:, L.omega_f] = (-wf + self.mp * (self.Pset0 + u[:, L.p_set] - Pf)) / self.tau
        dve = (self.Vset0 + u[:, L.v_set] - ve - V[:, ng:] + self.mq * (self.Qset0 + u[:, L.q_set] - Qf)) / self.tau
        dx[:, L.ve_f] = dve
        dx[:, L.v_f] = self.kpv * dve + self.kiv * ve
        return dx


def simulate_batch(system: PowerSystem, K, dP, dQ, onset=0.0, horizon: float = 6.0,
                   substeps: int = 10, linearized: bool = False) -> NonlinearResult:
    """Simulate many load-step scenarios at once with fixed-step RK4.

    ``dP``/``dQ`` have shape ``(S, n_gfm)``.  The control ``u = -K x`` is
    recomputed every control step ``system.dt`` and held over ``substeps``
    RK4 steps.  Scenarios whose deviation norm exceeds the blow-up bound are
    frozen and flagged.
    """
    Kmat = _gain(K)
    L = system.layout
    dP = np.atleast_2d(np.asarray(dP, dtype=float))
    dQ = np.atleast_2d(np.asarray(dQ, dtype=float))
    S = dP.shape[0]
    onset = np.broadcast_to(np.asarray(onset, dtype=float), (S,))
    steps = int(round(horizon / system.dt))
    h = system.dt / substeps
    rhs = _Rhs(system, linearized)
    x = np.zeros((S, L.n_state))
    xs = np.zeros((S, steps + 1, L.n_state))
    us = np.zeros((S, steps, L.n_input))
    diverged = np.zeros(S, dtype=bool)
    blowup = np.full(S, np.nan)

    def dist(t):
        on = (t >= onset)[:, None]
        return dP * on, dQ * on

    for k in range(steps):
        u = -x @ Kmat.T
        us[:, k] = u
        t0 = k * system.dt
        for i in range(substeps):
            t = t0 + i * h
            d0 = dist(t)
            dm = dist(t + 0.5 * h)
            d1 = dist(t + h)
            k1 = rhs(x, u, *d0)
            k2 = rhs(x + 0.5 * h * k1, u, *dm)
            k3 = rhs(x + 0.5 * h * k2, u, *dm)
            k4 = rhs(x + h * k3, u, *d1)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            with np.errstate(invalid="ignore"):
                bad = ~diverged & (~np.isfinite(x).all(axis=1) | (np.abs(x).max(axis=1) > BLOWUP_NORM))
            if bad.any():
                blowup[bad] = t + h
                diverged |= bad
            x[diverged] = 0.0
        xs[:, k + 1] = x
    return NonlinearResult(np.arange(steps + 1) * system.dt, xs, us, diverged, blowup)


def simulate_nonlinear(system: PowerSystem, K, dist: LoadDisturbance, horizon: float = 6.0,
                       substeps: int = 10, linearized: bool = False) -> Trajectory:
    """Single-scenario closed-loop simulation; raises ``DivergenceError`` on blow-up."""
    res = simulate_batch(system, K, dist.dP[None], dist.dQ[None], dist.onset, horizon, substeps, linearized)
    if res.diverged[0]:
        raise DivergenceError(f"simulation blew up at t = {res.blowup_time[0]:.3f} s", float(res.blowup_time[0]))
    return res.trajectory(0)


def frequency_deviations(traj: Trajectory, system: PowerSystem) -> np.ndarray:
    """Speed deviations (rad/s) of every node, SGs first: shape ``(steps+1, n_node)``."""
    L = system.layout
    return np.concatenate([traj.x[:, L.omega_g], traj.x[:, L.omega_f]], axis=1)
