"""Linearized SG/GFM state-space model and its forward-Euler discretization.

State order: ``[d_delta_g, d_omega_g, d_delta_f, d_omega_f, d_Ve_f, d_V_f]``.
Input order: ``[d_Vset_f, d_Pset_f, d_Qset_f]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .network import (
    GfmParams,
    JacobianBlocks,
    OperatingPoint,
    ReducedNetwork,
    SgParams,
    pf_jacobian,
    solve_operating_point,
)


@dataclass(frozen=True)
class StateLayout:
    n_sg: int
    n_gfm: int

    @property
    def n_state(self) -> int:
        return 2 * self.n_sg + 4 * self.n_gfm

    @property
    def n_input(self) -> int:
        return 3 * self.n_gfm

    @property
    def n_node(self) -> int:
        return self.n_sg + self.n_gfm

    def _sl(self, k: int) -> slice:
        g, f = self.n_sg, self.n_gfm
        starts = [0, g, 2 * g, 2 * g + f, 2 * g + 2 * f, 2 * g + 3 * f, 2 * g + 4 * f]
        return slice(starts[k], starts[k + 1])

    delta_g = property(lambda self: self._sl(0))
    omega_g = property(lambda self: self._sl(1))
    delta_f = property(lambda self: self._sl(2))
    omega_f = property(lambda self: self._sl(3))
    ve_f = property(lambda self: self._sl(4))
    v_f = property(lambda self: self._sl(5))

    @property
    def v_set(self) -> slice:
        return slice(0, self.n_gfm)

    @property
    def p_set(self) -> slice:
        return slice(self.n_gfm, 2 * self.n_gfm)

    @property
    def q_set(self) -> slice:
        return slice(2 * self.n_gfm, 3 * self.n_gfm)

    def node_state_indices(self, node: int) -> list[int]:
        """State indices owned by a node (2 for an SG, 4 for a GFM)."""
        if node < self.n_sg:
            return [self.delta_g.start + node, self.omega_g.start + node]
        j = node - self.n_sg
        if not 0 <= j < self.n_gfm:
            raise IndexError(f"node {node} out of range")
        return [s.start + j for s in (self.delta_f, self.omega_f, self.ve_f, self.v_f)]

    def input_indices(self, gfm: int) -> list[int]:
        return [s.start + gfm for s in (self.v_set, self.p_set, self.q_set)]

    def state_labels(self) -> list[str]:
        labels = []
        for name, sl, off in [
            ("delta_g", self.delta_g, 0), ("omega_g", self.omega_g, 0),
            ("delta_f", self.delta_f, self.n_sg), ("omega_f", self.omega_f, self.n_sg),
            ("Ve_f", self.ve_f, self.n_sg), ("V_f", self.v_f, self.n_sg),
        ]:
            labels += [f"{name}{i + off}" for i in range(sl.stop - sl.start)]
        return labels

    def input_labels(self) -> list[str]:
        return [f"{p}{j}" for p in ("Vset", "Pset", "Qset") for j in range(self.n_gfm)]


@dataclass(frozen=True)
class ContinuousDynamics:
    Ac: np.ndarray
    Bc: np.ndarray
    layout: StateLayout


@dataclass(frozen=True)
class DiscreteDynamics:
    A: np.ndarray
    B: np.ndarray
    dt: float
    source: ContinuousDynamics | None = None

    @property
    def n_state(self) -> int:
        return self.A.shape[0]

    @property
    def n_input(self) -> int:
        return self.B.shape[1]


def assemble_continuous(sg, gfm, jac: JacobianBlocks) -> ContinuousDynamics:
    sg, gfm = list(sg), list(gfm)
    L = StateLayout(len(sg), len(gfm))
    n, m = L.n_state, L.n_input
    Ac = np.zeros((n, n))
    Bc = np.zeros((n, m))

    M = np.array([p.M for p in sg])
    D = np.array([p.D for p in sg])
    tau = np.array([p.tau for p in gfm])
    mp = np.array([p.mp for p in gfm])
    mq = np.array([p.mq for p in gfm])
    kpv = np.array([p.kpv for p in gfm])
    kiv = np.array([p.kiv for p in gfm])

    def put(rows, blocks):
        # blocks: derivative of an injection w.r.t. (delta_g, delta_f, V_f)
        for cols, blk in zip((L.delta_g, L.delta_f, L.v_f), blocks):
            Ac[rows, cols] += blk

    idx_g = np.arange(L.n_sg)
    idx_f = np.arange(L.n_gfm)

    Ac[L.delta_g.start + idx_g, L.omega_g.start + idx_g] = 1.0
    Ac[L.omega_g.start + idx_g, L.omega_g.start + idx_g] = -D / M
    put(L.omega_g, (-jac.Pg_dg / M[:, None], -jac.Pg_df / M[:, None], -jac.Pg_dV / M[:, None]))

    Ac[L.delta_f.start + idx_f, L.omega_f.start + idx_f] = 1.0
    Ac[L.omega_f.start + idx_f, L.omega_f.start + idx_f] = -1.0 / tau
    put(L.omega_f, tuple(-(mp / tau)[:, None] * b for b in (jac.Pf_dg, jac.Pf_df, jac.Pf_dV)))
    Bc[L.omega_f.start + idx_f, L.p_set.start + idx_f] = mp / tau

    Ac[L.ve_f.start + idx_f, L.ve_f.start + idx_f] = -1.0 / tau
    Ac[L.ve_f.start + idx_f, L.v_f.start + idx_f] += -1.0 / tau
    put(L.ve_f, tuple(-(mq / tau)[:, None] * b for b in (jac.Qf_dg, jac.Qf_df, jac.Qf_dV)))
    Bc[L.ve_f.start + idx_f, L.v_set.start + idx_f] = 1.0 / tau
    Bc[L.ve_f.start + idx_f, L.q_set.start + idx_f] = mq / tau

    # dV/dt = kpv * dVe/dt + kiv * Ve
    Ac[L.v_f] = kpv[:, None] * Ac[L.ve_f]
    Ac[L.v_f.start + idx_f, L.ve_f.start + idx_f] += kiv
    Bc[L.v_f] = kpv[:, None] * Bc[L.ve_f]
    return ContinuousDynamics(Ac, Bc, L)


def discretize(cont: ContinuousDynamics, dt: float) -> DiscreteDynamics:
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    n = cont.Ac.shape[0]
    return DiscreteDynamics(np.eye(n) + dt * cont.Ac, dt * cont.Bc, float(dt), cont)


def load_input_matrix(gfm, layout: StateLayout) -> np.ndarray:
    """Continuous-time map from GFM-bus load steps ``[dP_L, dQ_L]`` into the state derivative.

    A load step raises the power the inverter delivers to the network, so it
    enters wherever the network injection does.
    """
    gfm = list(gfm)
    nf = layout.n_gfm
    E = np.zeros((layout.n_state, 2 * nf))
    for j, g in enumerate(gfm):
        E[layout.omega_f.start + j, j] = -g.mp / g.tau
        E[layout.ve_f.start + j, nf + j] = -g.mq / g.tau
        E[layout.v_f.start + j, nf + j] = -g.kpv * g.mq / g.tau
    return E


class PowerSystem:
    """A case's network and device parameters with its equilibrium and linearization."""

    def __init__(self, net: ReducedNetwork, sg, gfm, dt: float = 0.01):
        self.net = net
        self.sg: list[SgParams] = list(sg)
        self.gfm: list[GfmParams] = list(gfm)
        self.dt = float(dt)
        self.layout = StateLayout(len(self.sg), len(self.gfm))
        omegas = {p.omega0 for p in self.sg}
        if len(omegas) > 1:
            raise ValueError("all SGs must share one nominal speed")
        self.omega0 = omegas.pop() if omegas else 2 * np.pi * 60

    @cached_property
    def operating_point(self) -> OperatingPoint:
        return solve_operating_point(self.net, self.sg, self.gfm)

    @cached_property
    def continuous(self) -> ContinuousDynamics:
        return assemble_continuous(self.sg, self.gfm, pf_jacobian(self.operating_point, self.net))

    @cached_property
    def discrete(self) -> DiscreteDynamics:
        return discretize(self.continuous, self.dt)

    @cached_property
    def load_input(self) -> np.ndarray:
        return load_input_matrix(self.gfm, self.layout)
