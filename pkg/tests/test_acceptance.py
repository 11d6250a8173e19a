"""Acceptance criteria 1-8.

Each test prints one ``criterion N: PASS|FAIL`` line (collected again in the
terminal summary) and then asserts it.  Run on its own with
``pytest tests/test_acceptance.py -s`` or ``python3 tests/test_acceptance.py``.
"""
import filecmp
import logging
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_stable
from gfmrisk.case import build_case, load_case
from gfmrisk.control import CostWeights, dare_baseline, is_stabilizing, lqr_cost_analytic, lqr_cost_mc
from gfmrisk.harness import run_experiment
from gfmrisk.model import DiscreteDynamics
from gfmrisk.network import pf_injections, pf_jacobian
from gfmrisk.noise import NoiseModel
from gfmrisk.optimizer import (
    TrainingConfig,
    find_initial_policy,
    max_oracle,
    sample_perturbation,
    sgdmax,
    zopg,
)
from gfmrisk.policy import GainMask, Policy
from gfmrisk.risk import RiskParams, RiskProblem, risk_definition_mc, risk_value_mc
from gfmrisk.simulate import simulate_batch


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def random_noise(rng, n, mean_scale=0.1):
    L = rng.standard_normal((n, n))
    return NoiseModel.gaussian(rng.normal(0, mean_scale, n), L @ L.T / n + 0.1 * np.eye(n))


@pytest.fixture(scope="module")
def experiment(two_area, tmp_path_factory):
    out = tmp_path_factory.mktemp("two_area")
    t0 = time.perf_counter()
    res = run_experiment(two_area, seed=0, levels=("high",), count=100, out_dir=out)
    return res, time.perf_counter() - t0


def test_criterion_1_cost_oracle():
    t0 = time.perf_counter()
    errs = []
    for i in range(20):
        rng = np.random.default_rng([1, i])
        n = int(rng.integers(1, 11))
        dyn = random_stable(rng, n, m=1, rho=rng.uniform(0.3, 0.9))
        w = CostWeights(np.diag(rng.uniform(0.5, 2.0, n)), np.eye(1))
        noise = random_noise(rng, n)
        K = np.zeros((1, n))
        exact = lqr_cost_analytic(K, dyn, w, noise)
        est = lqr_cost_mc(K, dyn, w, noise, T=2000, rollouts=200, seed=i)
        errs.append(abs(est.mean - exact) / exact)
    elapsed = time.perf_counter() - t0
    report(1, max(errs) <= 0.02 and elapsed < 60,
           f"max relative error {max(errs):.4f} (<= 0.02) over 20 systems in {elapsed:.1f} s (< 60 s)")


def test_criterion_2_risk_reformulation():
    worst = 0.0
    for i in range(10):
        rng = np.random.default_rng([2, i])
        n = int(rng.integers(1, 7))
        dyn = random_stable(rng, n, m=1, rho=rng.uniform(0.3, 0.9))
        Q = np.diag(rng.uniform(0.5, 2.0, n))
        noise = random_noise(rng, n)
        K = np.zeros((1, n))
        W = noise.cov
        WQ = W @ Q
        m4 = 2.0 * np.trace(WQ @ WQ)
        # independent streams, so the two standard errors combine in quadrature
        d = risk_definition_mc(K, dyn, Q, noise, T=2000, rollouts=200, seed=10 * i)
        r = risk_value_mc(K, dyn, Q, noise, T=2000, rollouts=200, seed=10 * i + 1)
        gap = d.mean - (r.mean + m4 - 4.0 * np.trace(WQ @ WQ))
        worst = max(worst, abs(gap) / np.hypot(d.stderr, r.stderr))
    report(2, worst <= 3.0, f"largest gap {worst:.2f} combined standard errors (<= 3) over 10 systems")


def _ball(rng, count, dim):
    v = rng.standard_normal((count, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * rng.uniform(0, 1, (count, 1)) ** (1.0 / dim)


def test_criterion_3_zopg_fidelity():
    A = np.array([[1.0, 0.2, 0.0], [0.0, 0.9, 0.1], [0.05, 0.0, 0.8]])
    B = np.array([[0.0], [0.5], [1.0]])
    dyn = DiscreteDynamics(A, B, 0.01)
    w = CostWeights(np.eye(3), np.eye(1))
    noise = NoiseModel.gaussian(np.zeros(3), 0.1 * np.eye(3))
    K = np.array([[0.3, 0.6, 0.2]])
    lam, r = 1.0, 0.1
    # The one-point estimator's variance scales with L^2, so the tolerance c is
    # chosen to make L(K, lam) = 0 at the test point; the gradient is unaffected.
    probe = RiskProblem(dyn, w, noise, RiskParams(0.0, 10.0))
    R0, Rc = probe.terms(K)
    c = R0 / lam + Rc - probe.c_bar
    problem = RiskProblem(dyn, w, noise, RiskParams(c, 10.0))
    assert abs(problem.lagrangian(K, lam)) < 1e-9

    mask = GainMask.dense((1, 3))
    rng = np.random.default_rng(0)
    G = np.zeros((1, 3))
    draws = 10_000
    for _ in range(draws):
        G += zopg(K, sample_perturbation(mask, rng), r, lam, problem)[0]
    G = (G / draws).ravel()

    # central differences of the r-smoothed Lagrangian, common ball samples on both sides
    V = _ball(np.random.default_rng(1), 5000, 3)
    h = 1e-4
    g = np.zeros(3)
    for i in range(3):
        e = np.zeros((1, 3))
        e[0, i] = h
        g[i] = np.mean([problem.lagrangian(K + e + r * v, lam) - problem.lagrangian(K - e + r * v, lam)
                        for v in V[:, None, :]]) / (2 * h)
    cos = G @ g / (np.linalg.norm(G) * np.linalg.norm(g))
    rel = np.linalg.norm(G - g) / np.linalg.norm(g)
    report(3, cos >= 0.9 and rel <= 0.1, f"cosine {cos:.5f} (>= 0.9), relative error {rel:.4f} (<= 0.1)")


def _train_unconstrained(dyn, K0, eta):
    w = CostWeights(np.eye(dyn.n_state), np.eye(dyn.n_input))
    noise = NoiseModel.gaussian(np.zeros(dyn.n_state), np.eye(dyn.n_state))
    problem = RiskProblem(dyn, w, noise, RiskParams(0.2, 0.0))
    cfg = TrainingConfig(r=0.1, eta=eta, M=500, N=20, Lambda=0.0, seed=0)
    K, _ = sgdmax(Policy(np.atleast_2d(K0), GainMask.dense(np.shape(np.atleast_2d(K0)))), cfg, problem)
    K_opt = dare_baseline(dyn, w)
    J, J_opt = lqr_cost_analytic(K, dyn, w, noise), lqr_cost_analytic(K_opt, dyn, w, noise)
    J_start = lqr_cost_analytic(np.atleast_2d(K0), dyn, w, noise)
    return J / J_opt - 1.0, J_start / J_opt - 1.0, K_opt, w, noise


def test_criterion_4_unconstrained_convergence():
    scalar = DiscreteDynamics(np.array([[1.0]]), np.array([[1.0]]), 0.01)
    gap1, start1, _, _, _ = _train_unconstrained(scalar, [[0.3]], 1e-3)
    planar = DiscreteDynamics(np.array([[1.0, 0.2], [0.0, 1.0]]), np.array([[0.0], [1.0]]), 0.01)
    gap2, start2, K_opt, w, noise = _train_unconstrained(planar, [[0.15, 0.4]], 3e-4)

    rng = np.random.default_rng(4)
    J_opt = lqr_cost_analytic(K_opt, planar, w, noise)
    spot = all(lqr_cost_analytic(K_opt + 0.05 * rng.standard_normal(K_opt.shape), planar, w, noise) >= J_opt - 1e-9
               for _ in range(100))
    report(4, gap1 <= 0.05 and gap2 <= 0.05 and spot,
           f"scalar {start1:.1%} -> {gap1:.2%}, 2-dim {start2:.1%} -> {gap2:.2%} above Riccati cost (<= 5%); "
           f"Riccati gain optimal among 100 perturbations: {spot}")


def test_criterion_5_jacobian_and_linearization(two_area):
    system = two_area.system
    op = system.operating_point
    net = system.net
    J = pf_jacobian(op, net).matrix()
    n, ng = net.node_count, net.n_sg
    h = 1e-6
    cols = []
    for k in range(n + net.n_gfm):
        dd, dV = np.zeros(n), np.zeros(n)
        if k < n:
            dd[k] = h
        else:
            dV[ng + k - n] = h
        Pp, Qp = pf_injections(op.delta + dd, op.V + dV, net)
        Pm, Qm = pf_injections(op.delta - dd, op.V - dV, net)
        cols.append(np.concatenate([Pp - Pm, (Qp - Qm)[ng:]]) / (2 * h))
    fd = np.column_stack(cols)
    jac_err = np.abs(J - fd).max() / np.abs(fd).max()

    K = find_initial_policy(system.discrete, two_area.mask)
    eps = 0.2
    dP = np.array([[eps, -eps], [eps / 2, -eps / 2]])
    nl = simulate_batch(system, K, dP, 0.2 * dP, horizon=6.0)
    li = simulate_batch(system, K, dP, 0.2 * dP, horizon=6.0, linearized=True)
    gap = np.abs(nl.x - li.x).max(axis=(1, 2))
    ratio = gap[0] / gap[1]
    report(5, jac_err <= 1e-6 and 3.5 <= ratio <= 4.5,
           f"Jacobian relative error {jac_err:.2e} (<= 1e-6); half-disturbance discrepancy ratio {ratio:.3f} "
           f"(in [3.5, 4.5])")


def test_criterion_6_risk_shapes_test_distribution(experiment):
    res, elapsed = experiment
    reps = res.reports["high"]
    b, g, gr = (reps[k].summary for k in ("baseline", "gfm", "gfm-risk"))
    ok = (gr.variance < g.variance and gr.max < g.max and g.median < b.median and gr.median < b.median
          and elapsed < 600)
    report(6, ok,
           f"variance gfm-risk {gr.variance:.4f} < gfm {g.variance:.4f}; max {gr.max:.4f} < {g.max:.4f}; "
           f"medians gfm {g.median:.4f}, gfm-risk {gr.median:.4f} < baseline {b.median:.4f}; {elapsed:.0f} s")


def test_criterion_7_training_traces(experiment, two_area):
    res, _ = experiment
    cfg = two_area.training
    g, gr = res.traces["gfm"], res.traces["gfm-risk"]
    lam_values = {bool(f > 0) for f in gr.column("lam_fraction")}
    ok = (cfg.r == 0.1 and cfg.eta == 1e-4 and cfg.M == 50 and g.final_objective < g.records[0].objective
          and gr.final_objective < gr.records[0].objective and lam_values == {False, True})
    report(7, ok,
           f"gfm {g.records[0].objective:.4f} -> {g.final_objective:.4f}, gfm-risk {gr.records[0].objective:.4f} "
           f"-> {gr.final_objective:.4f} over M = {cfg.M}; gfm-risk multiplier takes both endpoints: "
           f"{lam_values == {False, True}}")


def _experiment_files_equal(toy, tmp_path):
    cfg = replace(toy.training, M=3, N=4)
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        run_experiment(build_case(load_case("toy3")), cfg, seed=5, levels=("low", "high"), count=5, out_dir=d)
    names = sorted(p.name for p in dirs[0].iterdir())
    same = names == sorted(p.name for p in dirs[1].iterdir())
    match, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], names, shallow=False)
    return same and not mismatch and not errors, len(match)


def test_criterion_8_invariants(experiment, two_area, toy, tmp_path):
    res, _ = experiment
    mask = two_area.mask.matrix
    iterates = [K for tr in res.traces.values() for K in tr.gains]
    mask_ok = all(not K[~mask].any() for K in iterates)

    system = two_area.system
    zero = np.zeros((1, system.layout.n_gfm))
    drift = np.abs(simulate_batch(system, np.zeros(mask.shape), zero, zero, horizon=6.0).x).max()

    det_ok, n_files = _experiment_files_equal(toy, tmp_path)

    dyn = system.discrete
    problem = RiskProblem(dyn, two_area.weights, two_area.noise, two_area.risk, window=two_area.window)
    K0 = find_initial_policy(dyn, two_area.mask)
    rng = np.random.default_rng(8)
    Lambda = two_area.risk.Lambda
    grid = np.linspace(0.0, Lambda, 21)
    oracle_ok = True
    for _ in range(20):
        K = K0.K + 0.1 * sample_perturbation(two_area.mask, rng)
        if not is_stabilizing(K, dyn).stable:
            continue
        lam = max_oracle(K, problem, Lambda)
        best = max(problem.lagrangian(K, l) for l in grid)
        oracle_ok &= lam in (0.0, Lambda) and problem.lagrangian(K, lam) >= best - 1e-9 * max(1.0, abs(best))
    report(8, mask_ok and drift < 1e-9 and det_ok and oracle_ok,
           f"{len(iterates)} iterates on mask: {mask_ok}; equilibrium drift {drift:.1e} (< 1e-9); "
           f"{n_files} output files byte-identical: {det_ok}; max-oracle optimal on 20 samples: {oracle_ok}")


if __name__ == "__main__":
    logging.basicConfig(level=logging.WARNING)
    pytest.main([__file__, "-s"])
