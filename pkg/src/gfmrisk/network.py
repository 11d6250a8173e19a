"""Network model: Kron reduction, power-flow injections, equilibrium and PF Jacobian.

Nodes of a reduced network are ordered with all synchronous generators (SG)
first and all grid-forming inverters (GFM) after.  Angles are in radians,
voltages and powers in per-unit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class KronReductionError(ValueError):
    """The eliminated block of the admittance matrix is singular."""


class InfeasibleCaseError(RuntimeError):
    """The equilibrium solver did not converge."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class SgParams:
    """Swing-equation machine.  ``V`` is the fixed internal voltage (no exciter)."""

    M: float
    D: float
    P: float
    V: float = 1.0
    omega0: float = 2 * np.pi * 60

    def __post_init__(self):
        if self.M <= 0:
            raise ValueError(f"SG inertia must be positive, got {self.M}")
        if self.D < 0:
            raise ValueError(f"SG damping must be non-negative, got {self.D}")
        if self.omega0 <= 0:
            raise ValueError(f"nominal speed must be positive, got {self.omega0}")
        if self.V <= 0:
            raise ValueError(f"SG voltage must be positive, got {self.V}")


@dataclass(frozen=True)
class GfmParams:
    """Droop-controlled inverter with a PI stage on the voltage error."""

    tau: float = 0.01
    mp: float = 0.01
    mq: float = 0.05
    kpv: float = 0.01
    kiv: float = 5.86
    V_set: float = 1.0
    P_set: float = 0.0
    Q_set: float = 0.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"droop time constant must be positive, got {self.tau}")
        if self.mp <= 0 or self.mq <= 0:
            raise ValueError("droop gains mp and mq must be positive")
        if self.kpv < 0 or self.kiv < 0:
            raise ValueError("PI gains must be non-negative")


@dataclass(frozen=True)
class ReducedNetwork:
    G: np.ndarray
    B: np.ndarray
    n_sg: int
    n_gfm: int

    def __post_init__(self):
        G = np.asarray(self.G, dtype=float)
        B = np.asarray(self.B, dtype=float)
        n = self.n_sg + self.n_gfm
        if G.shape != (n, n) or B.shape != (n, n):
            raise ValueError(f"G and B must be {n}x{n} for {self.n_sg} SG + {self.n_gfm} GFM nodes")
        if not (np.allclose(G, G.T, atol=1e-10) and np.allclose(B, B.T, atol=1e-10)):
            raise ValueError("G and B must be symmetric")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "B", B)

    @property
    def node_count(self) -> int:
        return self.n_sg + self.n_gfm

    @property
    def node_kind(self) -> list[str]:
        return ["SG"] * self.n_sg + ["GFM"] * self.n_gfm

    @property
    def Y(self) -> np.ndarray:
        return self.G + 1j * self.B


def admittance_matrix(n_bus: int, branches, shunts=()) -> np.ndarray:
    """Bus admittance matrix from ``(i, j, r, x[, b_charging])`` branches and ``(bus, g, b)`` shunts."""
    Y = np.zeros((n_bus, n_bus), dtype=complex)
    for br in branches:
        i, j, r, x = br[:4]
        bc = br[4] if len(br) > 4 else 0.0
        y = 1.0 / complex(r, x)
        Y[i, i] += y + 0.5j * bc
        Y[j, j] += y + 0.5j * bc
        Y[i, j] -= y
        Y[j, i] -= y
    for bus, g, b in shunts:
        Y[bus, bus] += complex(g, b)
    return Y


def kron_reduce(Y, retained, n_sg: int | None = None) -> ReducedNetwork:
    """Eliminate every bus not in ``retained`` by a Schur complement.

    The first ``n_sg`` entries of ``retained`` are tagged as SG nodes, the rest
    as GFM nodes (default: all SG).  The order of ``retained`` is kept.
    """
    Y = np.asarray(Y, dtype=complex)
    retained = [int(i) for i in retained]
    if len(set(retained)) != len(retained):
        raise ValueError("retained bus list has duplicates")
    elim = [i for i in range(Y.shape[0]) if i not in set(retained)]
    Y_rr = Y[np.ix_(retained, retained)]
    if elim:
        Y_ee = Y[np.ix_(elim, elim)]
        if np.linalg.cond(Y_ee) > 1e12:
            raise KronReductionError(f"eliminated block is singular for buses {elim}")
        Y_re = Y[np.ix_(retained, elim)]
        Y_er = Y[np.ix_(elim, retained)]
        Y_red = Y_rr - Y_re @ np.linalg.solve(Y_ee, Y_er)
    else:
        Y_red = Y_rr.copy()
    # symmetrize away round-off
    Y_red = 0.5 * (Y_red + Y_red.T)
    if n_sg is None:
        n_sg = len(retained)
    return ReducedNetwork(Y_red.real.copy(), Y_red.imag.copy(), n_sg, len(retained) - n_sg)


def _power_terms(delta, V, net: ReducedNetwork):
    delta = np.asarray(delta, dtype=float)
    V = np.asarray(V, dtype=float)
    n = net.node_count
    if delta.shape[-1] != n or V.shape[-1] != n:
        raise ValueError(f"angle/voltage vectors must have length {n}")
    theta = delta[..., :, None] - delta[..., None, :]
    VV = V[..., :, None] * V[..., None, :]
    c, s = np.cos(theta), np.sin(theta)
    C = VV * (net.G * c + net.B * s)
    S = VV * (net.G * s - net.B * c)
    return C, S


def pf_injections(delta, V, net: ReducedNetwork):
    """Active and reactive power delivered by each node to the network.

    Accepts batched inputs of shape ``(..., n)``.
    """
    C, S = _power_terms(delta, V, net)
    return C.sum(axis=-1), S.sum(axis=-1)


def pf_derivatives(delta, V, net: ReducedNetwork):
    """Full n x n derivatives ``(dP/ddelta, dP/dV, dQ/ddelta, dQ/dV)`` at one point."""
    V = np.asarray(V, dtype=float)
    C, S = _power_terms(delta, V, net)
    P, Q = C.sum(axis=1), S.sum(axis=1)
    dP_dd = S.copy()
    np.fill_diagonal(dP_dd, 0.0)
    np.fill_diagonal(dP_dd, -dP_dd.sum(axis=1))
    dQ_dd = -C
    np.fill_diagonal(dQ_dd, 0.0)
    np.fill_diagonal(dQ_dd, -dQ_dd.sum(axis=1))
    dP_dV = C / V[None, :] + np.diag(P / V)
    dQ_dV = S / V[None, :] + np.diag(Q / V)
    return dP_dd, dP_dV, dQ_dd, dQ_dV


@dataclass(frozen=True)
class OperatingPoint:
    """Equilibrium of the coupled SG/GFM system.

    ``sg_power`` and ``gfm_p_set`` are the mechanical powers and active
    setpoints actually in force at equilibrium; the solver adjusts the slack
    node's value so that the system sits exactly at nominal speed.
    """

    delta: np.ndarray
    V: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    sg_power: np.ndarray
    gfm_p_set: np.ndarray
    slack_adjustment: float = 0.0
    residual: float = 0.0


def _equilibrium_residual(z, net, sg, gfm, slack_index):
    n, ng = net.node_count, net.n_sg
    delta = np.concatenate([[0.0], z[: n - 1]])
    Vf = z[n - 1 : n - 1 + net.n_gfm]
    s = z[-1]
    V = np.concatenate([[p.V for p in sg], Vf])
    P, Q = pf_injections(delta, V, net)
    p_param = np.array([p.P for p in sg] + [p.P_set for p in gfm], dtype=float)
    p_param[slack_index] += s
    res_p = p_param - P
    res_q = np.array([g.V_set - Vf[j] + g.mq * (g.Q_set - Q[ng + j]) for j, g in enumerate(gfm)])
    return np.concatenate([res_p, res_q]), delta, V, P, Q, p_param


def _equilibrium_jacobian(delta, V, net, gfm, slack_index):
    n, ng, nf = net.node_count, net.n_sg, net.n_gfm
    dP_dd, dP_dV, dQ_dd, dQ_dV = pf_derivatives(delta, V, net)
    J = np.zeros((n + nf, n + nf))
    # columns: delta_1..delta_{n-1}, V_f, slack
    J[:n, : n - 1] = -dP_dd[:, 1:]
    J[:n, n - 1 : n - 1 + nf] = -dP_dV[:, ng:]
    J[slack_index, -1] = 1.0
    mq = np.array([g.mq for g in gfm])
    J[n:, : n - 1] = -mq[:, None] * dQ_dd[ng:, 1:]
    J[n:, n - 1 : n - 1 + nf] = -np.eye(nf) - mq[:, None] * dQ_dV[ng:, ng:]
    return J


def solve_operating_point(net: ReducedNetwork, sg, gfm, tol: float = 1e-10, max_iter: int = 50) -> OperatingPoint:
    """Damped Newton on the equilibrium conditions, from a flat start.

    Node 0 is the angle reference and the slack: its mechanical power (SG)
    or active setpoint (GFM) absorbs the network losses.
    """
    sg, gfm = list(sg), list(gfm)
    if len(sg) != net.n_sg or len(gfm) != net.n_gfm:
        raise ValueError("parameter lists do not match the network node kinds")
    n = net.node_count
    slack_index = 0
    z = np.concatenate([np.zeros(n - 1), [g.V_set for g in gfm], [0.0]])
    res, *_ = _equilibrium_residual(z, net, sg, gfm, slack_index)
    norm = np.linalg.norm(res)
    extra = 2  # polish past tolerance so the equilibrium is tight to round-off
    for _ in range(max_iter):
        if norm < tol:
            if extra == 0:
                break
            extra -= 1
        _, delta, V, *_ = _equilibrium_residual(z, net, sg, gfm, slack_index)
        J = _equilibrium_jacobian(delta, V, net, gfm, slack_index)
        try:
            step = np.linalg.solve(J, -res)
        except np.linalg.LinAlgError as exc:
            raise InfeasibleCaseError("singular equilibrium Jacobian", float(norm)) from exc
        alpha = 1.0
        while True:
            z_new = z + alpha * step
            res_new, *_ = _equilibrium_residual(z_new, net, sg, gfm, slack_index)
            norm_new = np.linalg.norm(res_new)
            if norm_new < norm or norm < tol or alpha < 1e-4:
                break
            alpha *= 0.5
        z, res, norm = z_new, res_new, norm_new
    if not norm < tol:
        raise InfeasibleCaseError(
            f"operating point did not converge in {max_iter} iterations (residual {norm:.3e})", float(norm)
        )
    res, delta, V, P, Q, p_param = _equilibrium_residual(z, net, sg, gfm, slack_index)
    return OperatingPoint(
        delta=delta,
        V=V,
        P=P,
        Q=Q,
        sg_power=p_param[: net.n_sg].copy(),
        gfm_p_set=p_param[net.n_sg :].copy(),
        slack_adjustment=float(z[-1]),
        residual=float(np.linalg.norm(res)),
    )


@dataclass(frozen=True)
class JacobianBlocks:
    """Linearized injections ``(P_g, P_f, Q_f)`` w.r.t. ``(delta_g, delta_f, V_f)``."""

    Pg_dg: np.ndarray
    Pg_df: np.ndarray
    Pg_dV: np.ndarray
    Pf_dg: np.ndarray
    Pf_df: np.ndarray
    Pf_dV: np.ndarray
    Qf_dg: np.ndarray
    Qf_df: np.ndarray
    Qf_dV: np.ndarray
    n_sg: int = field(default=0)
    n_gfm: int = field(default=0)

    def matrix(self) -> np.ndarray:
        return np.block(
            [
                [self.Pg_dg, self.Pg_df, self.Pg_dV],
                [self.Pf_dg, self.Pf_df, self.Pf_dV],
                [self.Qf_dg, self.Qf_df, self.Qf_dV],
            ]
        )


def pf_jacobian(op: OperatingPoint, net: ReducedNetwork) -> JacobianBlocks:
    dP_dd, dP_dV, dQ_dd, dQ_dV = pf_derivatives(op.delta, op.V, net)
    g = slice(0, net.n_sg)
    f = slice(net.n_sg, net.node_count)
    return JacobianBlocks(
        dP_dd[g, g], dP_dd[g, f], dP_dV[g, f],
        dP_dd[f, g], dP_dd[f, f], dP_dV[f, f],
        dQ_dd[f, g], dQ_dd[f, f], dQ_dV[f, f],
        n_sg=net.n_sg, n_gfm=net.n_gfm,
    )
