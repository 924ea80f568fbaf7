"""Acceptance suite: one test per shipped guarantee, at its stated tolerance.

Each test prints the measured quantity it gates on, so a failure line carries
the evidence.  The expensive full-size MPC solves are shared across tests
through module-scoped fixtures; the suite is expected to run end to end in
well under ten minutes on one core.
"""

import time

import numpy as np
import pytest

from helpers import random_well_posed_network, rollout_cost
from robsyn.conic import SolverOptions
from robsyn.mpc import (
    condense_qp,
    qp_to_implicit_network,
    reference_mpc_problem,
    simulate_closed_loop,
    solve_qp_oracle,
)
from robsyn.multipliers import (
    Dims,
    InputPairSet,
    build_omega_g,
    build_omega_g_check,
    build_omega_gamma,
    build_omega_u,
    build_omega_z,
    build_omega_z_check,
)
from robsyn.network import evaluate, evaluate_batch, relu
from robsyn.synthesis import (
    SimilarityTolerances,
    SynthesisProblem,
    analyze_network,
    synthesize,
)
from robsyn.verification import (
    SampleSpec,
    empirical_bound_check,
    lemma_property_suite,
    max_weight_deviation,
    sweep_tolerance,
)

_T0 = time.perf_counter()

PAIR_SET = InputPairSet(1.0, 1.0)
SWEEP_GRID = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0]


@pytest.fixture(scope="module")
def mpc_fixture():
    problem = reference_mpc_problem()
    qp = condense_qp(problem)
    net = qp_to_implicit_network(qp, attach_hint=False)
    return problem, qp, net


def _pinned_gain_problem(net, eps):
    return SynthesisProblem(
        network=net,
        input_set=PAIR_SET,
        tolerances=SimilarityTolerances.uniform(eps),
        fixed_gamma_u1=0.0,
        fixed_gamma_u2=0.0,
    )


@pytest.fixture(scope="module")
def mpc_analysis(mpc_fixture):
    _, _, net = mpc_fixture
    return analyze_network(net, PAIR_SET, fixed_gamma_u1=0.0, fixed_gamma_u2=0.0)


@pytest.fixture(scope="module")
def mpc_synth_fine(mpc_fixture):
    """The full-size synthesis at the fine tolerance, timed, at 1e-8 tolerances."""
    _, _, net = mpc_fixture
    t0 = time.perf_counter()
    sol = synthesize(
        _pinned_gain_problem(net, 1e-5),
        options=SolverOptions(feas_tol=1e-8, gap_tol=1e-8),
    )
    return sol, time.perf_counter() - t0


@pytest.fixture(scope="module")
def mpc_synth_zero(mpc_fixture):
    _, _, net = mpc_fixture
    return synthesize(_pinned_gain_problem(net, 0.0))


@pytest.fixture(scope="module")
def mpc_synth_coarse(mpc_fixture):
    _, _, net = mpc_fixture
    return synthesize(_pinned_gain_problem(net, 1e-1))


@pytest.fixture(scope="module")
def mpc_sweep(mpc_fixture):
    _, _, net = mpc_fixture
    return sweep_tolerance(
        net, PAIR_SET, SWEEP_GRID, spec=SampleSpec(num_pairs=2000), seed=0
    )


def test_criterion_1_multiplier_lemma_suite():
    t0 = time.perf_counter()
    out = lemma_property_suite(num_networks=200, pairs_per_network=1000, seed=0)
    elapsed = time.perf_counter() - t0
    print(
        f"criterion 1: min normalized slack {out.min_normalized_slack:.3e}, "
        f"{out.failures} failures, {elapsed:.1f}s"
    )
    assert out.failures == 0
    assert out.min_normalized_slack >= -1e-8
    assert elapsed < 60.0


def test_criterion_2_substitution_and_scalar_fidelity():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        d = Dims(
            int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        )
        T_z = rng.uniform(0.0, 2.0, d.n)
        T_g = rng.uniform(0.0, 2.0, d.n_g)
        T_u1, T_u2 = rng.uniform(0.0, 2.0, 2)
        gam, gam1, gam2 = rng.uniform(0.0, 2.0, 3)
        Psi_z = rng.standard_normal((d.n, d.n))
        Psi_u = rng.standard_normal((d.n, d.n_u))
        Psi_gz = rng.standard_normal((d.n_g, d.n))
        Psi_gu = rng.standard_normal((d.n_g, d.n_u))
        # substitution: the convex builders at Y = T * Psi are bit-identical
        assert np.array_equal(
            build_omega_z_check(d, T_z, T_z[:, None] * Psi_z, T_z[:, None] * Psi_u),
            build_omega_z(d, T_z, Psi_z, Psi_u),
        )
        assert np.array_equal(
            build_omega_g_check(d, T_g, T_g[:, None] * Psi_gz, T_g[:, None] * Psi_gu),
            build_omega_g(d, T_g, Psi_gz, Psi_gu),
        )
        # scalar expansion on a realizable incremental vector
        z = rng.standard_normal(d.n)
        u = rng.standard_normal(d.n_u)
        g = rng.standard_normal(d.n_g)
        p = np.zeros(d.N_p)
        p[d.sl_g_pm] = np.concatenate([relu(g), relu(-g)])
        p[d.sl_u_pm] = np.concatenate([relu(u), relu(-u)])
        p[d.sl_z] = z
        p[d.sl_u] = u
        p[d.idx_one] = 1.0
        ps = InputPairSet(float(rng.uniform(0.1, 3.0)), float(rng.uniform(0.1, 3.0)))
        M = (
            build_omega_z(d, T_z, Psi_z, Psi_u)
            + build_omega_g(d, T_g, Psi_gz, Psi_gu)
            + build_omega_u(d, T_u1, T_u2, ps)
            + build_omega_gamma(d, gam, gam1, gam2)
        )
        lin = Psi_gz @ z + Psi_gu @ u
        gp, gm = relu(g), relu(-g)
        expect = (
            z @ (T_z * (Psi_z @ z + Psi_u @ u - z))
            - gp @ (T_g * gp)
            - gm @ (T_g * gm)
            + g @ (T_g * lin)
            + T_u1 * (ps.eps_u1 - np.sum(np.abs(u)))
            + T_u2 * (ps.eps_u2 - u @ u)
            + np.sum(np.abs(g))
            - gam
            - gam1 * np.sum(np.abs(u))
            - gam2 * (u @ u)
        )
        err = abs(p @ M @ p - expect) / max(1.0, abs(expect))
        worst = max(worst, err)
    print(f"criterion 2: worst relative scalar-form error {worst:.3e}")
    assert worst <= 1e-12


def test_criterion_3_zero_tolerance_consistency(mpc_fixture, mpc_synth_zero, mpc_analysis):
    _, _, net = mpc_fixture
    dev = max_weight_deviation(mpc_synth_zero.network, net)
    ga = mpc_analysis.certificate.gamma
    gs = mpc_synth_zero.certificate.gamma
    rel = abs(gs - ga) / ga
    print(f"criterion 3: max weight deviation {dev:.3e}, gamma rel gap {rel:.3e}")
    assert dev <= 1e-6
    assert rel <= 1e-4


def test_criterion_4_soundness_over_random_corpus():
    rng = np.random.default_rng(4)
    spec = SampleSpec(num_pairs=10_000)
    optimal = 0
    worst_margin = np.inf
    for k in range(50):
        net = random_well_posed_network(
            1000 + k,
            n=int(rng.integers(1, 5)),
            n_u=int(rng.integers(1, 4)),
            n_g=int(rng.integers(1, 4)),
        )
        problem = SynthesisProblem(
            network=net,
            input_set=InputPairSet(
                float(rng.uniform(0.3, 2.0)), float(rng.uniform(0.3, 2.0))
            ),
            tolerances=SimilarityTolerances.uniform(float(rng.uniform(0.0, 0.25))),
            fixed_gamma_u1=0.0 if k % 2 else None,
            fixed_gamma_u2=0.0 if k % 2 else None,
        )
        sol = synthesize(problem)
        optimal += 1
        check = empirical_bound_check(sol.network, sol.certificate, spec, seed=k)
        worst_margin = min(worst_margin, check.worst_margin)
        assert check.violations == 0, (
            f"problem {k}: {check.violations} violations, "
            f"worst margin {check.worst_margin:.3e}"
        )
    print(
        f"criterion 4: {optimal}/50 optimal, zero violations, "
        f"worst margin {worst_margin:.3e}"
    )
    assert optimal == 50


def test_criterion_5_mpc_oracle_equivalence(mpc_fixture):
    problem, qp, net = mpc_fixture
    axis = np.linspace(-5.0, 5.0, 10)
    g1, g2 = np.meshgrid(axis, axis)
    states = np.column_stack([g1.ravel(), g2.ravel()])
    G = evaluate_batch(net, states.T)[0]
    err = 0.0
    for j, w in enumerate(states):
        err = max(err, float(np.max(np.abs(G[:, j] - solve_qp_oracle(qp, w).v))))
    rng = np.random.default_rng(5)
    cost_rel = 0.0
    for _ in range(100):
        w = rng.uniform(-5.0, 5.0, size=problem.n_x)
        v = solve_qp_oracle(qp, w).v
        direct = rollout_cost(problem, w, v)
        condensed = qp.total_cost(v, w)
        cost_rel = max(cost_rel, abs(condensed - direct) / max(1.0, abs(direct)))
    print(
        f"criterion 5: grid max error {err:.3e}, "
        f"worst cost identity rel error {cost_rel:.3e}"
    )
    assert err <= 1e-5
    assert cost_rel <= 1e-9


def test_criterion_6_certified_bound_improvement(mpc_synth_fine, mpc_analysis):
    gs = mpc_synth_fine[0].certificate.gamma
    ga = mpc_analysis.certificate.gamma
    print(
        f"criterion 6: gamma_synth {gs:.4f} vs gamma_analysis {ga:.4f} "
        f"(ratio {gs / ga:.4f}, required < 0.75)"
    )
    assert gs < 0.75 * ga, (
        f"fine-tolerance synthesis reduces the certified bound by only "
        f"{100 * (1 - gs / ga):.2f}% (gamma {ga:.4f} -> {gs:.4f}); the "
        f"required 25% reduction is not attained at tolerance 1e-5"
    )


def test_criterion_7_tradeoff_sweep(mpc_fixture, mpc_sweep):
    _, _, net = mpc_fixture
    rows = mpc_sweep.rows
    assert [r.eps for r in rows] == SWEEP_GRID
    assert all(r.status.startswith("optimal") for r in rows)
    gammas = [r.gamma for r in rows]
    for a, b in zip(gammas, gammas[1:]):
        assert b <= a + 1e-6
    drops = [
        (rows[i + 1].eps, 1.0 - gammas[i + 1] / gammas[i])
        for i in range(len(rows) - 1)
        if gammas[i] > 0 and gammas[i + 1] <= 0.5 * gammas[i]
    ]
    print(f"criterion 7: gammas {[f'{g:.4f}' for g in gammas]}, drop points {drops}")
    assert drops, "no adjacent grid points with a >= 50% drop in gamma"
    eps_star = drops[0][0]
    sol = synthesize(_pinned_gain_problem(net, eps_star))
    out_max = max(
        float(np.max(np.abs(sol.network.W_fx))), float(np.max(np.abs(sol.network.W_fu)))
    )
    print(f"criterion 7: at eps*={eps_star:g} max |output weight| = {out_max:.3e}")
    assert out_max <= eps_star + 1e-6


def test_criterion_8_closed_loop_fidelity(mpc_fixture, mpc_synth_fine, mpc_synth_coarse):
    problem, qp, _ = mpc_fixture
    w0 = np.array([1.0, -1.0])
    W_ref, _ = simulate_closed_loop(problem, w0, 30, qp=qp)
    devs = {}
    for label, sol in (("fine", mpc_synth_fine[0]), ("coarse", mpc_synth_coarse)):
        net = sol.network
        W_net, _ = simulate_closed_loop(
            problem, w0, 30, controller=lambda w: evaluate(net, w).g, qp=qp
        )
        devs[label] = float(np.max(np.abs(W_ref - W_net)))
    print(
        f"criterion 8: trajectory deviation fine {devs['fine']:.3e}, "
        f"coarse {devs['coarse']:.3e}"
    )
    assert devs["fine"] <= 1e-2
    assert devs["coarse"] >= 10 * 1e-2


def test_criterion_9_performance_envelope(mpc_synth_fine):
    solve_seconds = mpc_synth_fine[1]
    suite_seconds = time.perf_counter() - _T0
    print(
        f"criterion 9: full-size synthesis {solve_seconds:.2f}s, "
        f"suite so far {suite_seconds:.1f}s"
    )
    assert solve_seconds < 10.0
    assert suite_seconds < 600.0
