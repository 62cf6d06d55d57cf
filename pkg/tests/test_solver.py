"""Nonlinear solver suite: cap selection, monotone brackets, Newton,
exhaustion, truncation limits, barriers and exponent fits."""

import math
import warnings

import numpy as np
import pytest

from coneyamabe import (
    BoundaryTag,
    ConeModel,
    Field,
    MMatrixWarning,
    ReducedDomain,
    Verdict,
    barrier_psi_fit,
    build_mesh,
    check_sub_super,
    exact_model_solution,
    exhaustion_blowup_solve,
    fit_blowup_exponent,
    flat_cone_problem,
    maximal_solution,
    model_dirichlet_data,
    model_problem,
    monotone_iterate,
    newton_solve,
    pick_cap,
    solve_problem,
    truncation_family,
    upper_barrier_check,
)
from coneyamabe.solver import CapSearchError

RNG = np.random.default_rng(421731)


def make_mesh(n=3, d=1, h=1.0, omega_min=None, nn=16, grading=2.0):
    cone = ConeModel(n, d, h)
    if omega_min is None:
        omega_min = 0.3 * cone.theta  # moderate cap keeps the monotone scheme fast
    dom = ReducedDomain(cone, 0.5, 2.0, omega_min)
    return build_mesh(dom, nn, nn, grading)


# ---------------------------------------------------------------------------
# cap selection
# ---------------------------------------------------------------------------


def test_pick_cap_linear_problem_returns_data_max():
    mesh = make_mesh()
    prob = flat_cone_problem(mesh, 0.0, 0.0, 1.0)
    prob.c2_lin = Field.zeros(mesh)
    assert pick_cap(prob) == 1.0


def test_pick_cap_model_problem_monotonicity_conditions_hold():
    mesh = make_mesh()
    prob = model_problem(mesh)
    S = pick_cap(prob)
    data_max = float(np.max(prob.dirichlet_data.values[mesh.dirichlet_mask]))
    assert S >= data_max
    p, q = prob.p_interior, prob.p_boundary
    # derivative conditions at t = S hold nodewise
    assert S**p >= np.max(prob.c.values + p * prob.c0.values * S ** (p - 1))
    rob = mesh.robin_mask
    assert S**q >= np.max(prob.c2_lin.values[rob] + q * prob.c1.values[rob] * S ** (q - 1))


def test_pick_cap_overflow_guard():
    mesh = make_mesh()
    prob = flat_cone_problem(mesh, 1e30, 1.0, 1.0)
    with pytest.raises(CapSearchError):
        pick_cap(prob)


# ---------------------------------------------------------------------------
# admissibility checks
# ---------------------------------------------------------------------------


def test_zero_is_admissible_subsolution():
    mesh = make_mesh()
    prob = model_problem(mesh)
    rep = check_sub_super(prob, Field.zeros(mesh), "sub")
    assert rep.worst_margin <= 0.0


def test_small_constant_subsolution_in_negative_potential_regime():
    # with a negative linear potential, eps satisfies c*eps + c0*eps^p <= 0
    mesh = make_mesh()
    prob = flat_cone_problem(mesh, 1.0, 1.0, 1.0)
    prob.c = Field.full(mesh, -1.0)
    prob.c2_lin = Field.full(mesh, -1.0)
    eps = 0.25
    rep = check_sub_super(prob, Field.full(mesh, eps), "sub")
    assert rep.worst_margin <= 0.0
    # but a large constant is not a subsolution
    rep_big = check_sub_super(prob, Field.full(mesh, 1.0 + 1e-6), "sub")
    assert rep_big.worst_margin > 0.0


def test_twice_power_solution_is_supersolution():
    mesh = make_mesh()
    prob = model_problem(mesh)
    two_us = Field(mesh, 2.0 * mesh.rho ** (-mesh.domain.cone.blowup_exponent))
    rep = check_sub_super(prob, two_us, "super")
    assert rep.worst_margin <= 0.0
    # the margin is strictly negative away from zero: superlinearity bites
    assert rep.interior_margin < -1e-3


# ---------------------------------------------------------------------------
# monotone iteration
# ---------------------------------------------------------------------------


def test_monotone_linear_problem_fixed_point_in_two_iterations():
    mesh = make_mesh()
    prob = flat_cone_problem(mesh, 0.0, 0.0, 2.5)
    prob.c2_lin = Field.zeros(mesh)
    rep, bracket = monotone_iterate(prob, Field.zeros(mesh), S=2.5, tol=1e-9)
    assert np.allclose(rep.solution.values, 2.5, atol=1e-9)
    assert rep.iterations <= 2
    assert bracket.S == 2.5


def test_monotone_model_problem_converges_to_power_solution():
    errs = []
    for nn in (12, 24):
        mesh = make_mesh(nn=nn)
        prob = model_problem(mesh)
        S = pick_cap(prob)
        rep, bracket = monotone_iterate(prob, Field.zeros(mesh), S, tol=1e-10)
        exact = mesh.rho ** (-mesh.domain.cone.blowup_exponent)
        errs.append(np.max(np.abs(rep.solution.values - exact)))
        # bracket ordering persisted to the end
        assert np.max(bracket.sub.values - bracket.super.values) <= 1e-12 * (1 + S)
        assert np.min(bracket.sub.values) >= -1e-12 * (1 + S)
        assert np.max(bracket.super.values) <= S + 1e-12 * (1 + S)
        assert rep.converged
    assert errs[1] < 0.4 * errs[0]  # second-order trend


def test_monotone_residual_bound():
    mesh = make_mesh(nn=12)
    prob = model_problem(mesh)
    S = pick_cap(prob)
    tol = 1e-9
    rep, _ = monotone_iterate(prob, Field.zeros(mesh), S, tol=tol)
    assert rep.residual_sup <= 10.0 * tol * (1.0 + S ** prob.p_interior)


def test_monotone_comparison_doubling_c0_shrinks_solution():
    mesh = make_mesh(nn=12)
    prob = model_problem(mesh)
    S = pick_cap(prob)
    rep1, _ = monotone_iterate(prob, Field.zeros(mesh), S, tol=1e-11)
    prob2 = flat_cone_problem(mesh, Field(mesh, 2.0 * prob.c0.values), prob.c1,
                              prob.dirichlet_data)
    rep2, _ = monotone_iterate(prob2, Field.zeros(mesh), pick_cap(prob2), tol=1e-11)
    diff = rep1.solution.values - rep2.solution.values
    assert np.min(diff[mesh.free_mask]) >= -1e-9


def test_monotone_cap_independence():
    # doubling the cap never changes the converged solution beyond tolerance;
    # the doubled-cap run contracts ~16x slower, hence the generous budget
    mesh = make_mesh(nn=8)
    prob = model_problem(mesh)
    S = pick_cap(prob)
    rep1, _ = monotone_iterate(prob, Field.zeros(mesh), S, tol=5e-11, max_iter=8000)
    rep2, _ = monotone_iterate(prob, Field.zeros(mesh), 2 * S, tol=5e-11, max_iter=8000)
    assert np.max(np.abs(rep1.solution.values - rep2.solution.values)) <= 1e-8


def test_monotone_rejects_inadmissible_subsolution():
    mesh = make_mesh(nn=10)
    prob = model_problem(mesh)
    S = pick_cap(prob)
    bad = Field.full(mesh, S)  # constant cap is not a subsolution here
    with pytest.raises(ValueError):
        monotone_iterate(prob, bad, S)


def test_monotone_solution_positive_on_free_nodes():
    mesh = make_mesh(nn=12)
    prob = model_problem(mesh)
    rep, _ = monotone_iterate(prob, Field.zeros(mesh), pick_cap(prob), tol=1e-10)
    assert np.all(rep.solution.values[mesh.free_mask] > 0)


# ---------------------------------------------------------------------------
# Newton and scheme equivalence
# ---------------------------------------------------------------------------


def test_newton_matches_monotone_on_model_problem():
    mesh = make_mesh(nn=16)
    prob = model_problem(mesh)
    rep_m, _ = monotone_iterate(prob, Field.zeros(mesh), pick_cap(prob), tol=1e-11)
    rep_n = newton_solve(prob, tol=1e-11)
    assert np.max(np.abs(rep_m.solution.values - rep_n.solution.values)) <= 1e-10 * 10


def test_newton_model_convergence_order():
    errs = []
    for nn in (16, 32, 64):
        mesh = make_mesh(nn=nn, omega_min=0.15)
        prob = model_problem(mesh)
        rep = newton_solve(prob)
        exact = mesh.rho ** (-mesh.domain.cone.blowup_exponent)
        errs.append(np.max(np.abs(rep.solution.values - exact)))
    assert 1.7 <= math.log2(errs[0] / errs[1]) <= 2.3
    assert 1.7 <= math.log2(errs[1] / errs[2]) <= 2.3


def test_newton_larger_data_larger_solution():
    mesh = make_mesh(nn=12)
    base = flat_cone_problem(mesh, 1.0, 1.0, 1.0)
    u1 = newton_solve(base).solution.values
    u2 = newton_solve(base.with_data(2.0)).solution.values
    assert np.min(u2 - u1) >= -1e-9


def test_randomized_comparison_orderings():
    # ordered coefficients and data produce nodewise-ordered solutions
    mesh = make_mesh(nn=10)
    violations = 0
    for _ in range(25):
        c0a = RNG.uniform(0.2, 2.0)
        c1a = RNG.uniform(0.2, 2.0)
        da = RNG.uniform(0.2, 3.0)
        c0b = c0a * RNG.uniform(1.0, 3.0)
        c1b = c1a * RNG.uniform(1.0, 3.0)
        db = da * RNG.uniform(0.3, 1.0)
        ua = newton_solve(flat_cone_problem(mesh, c0a, c1a, da)).solution.values
        ub = newton_solve(flat_cone_problem(mesh, c0b, c1b, db)).solution.values
        if np.min(ua - ub) < -1e-9 * (1 + np.max(ua)):
            violations += 1
    assert violations == 0


# ---------------------------------------------------------------------------
# exhaustion and truncation limits
# ---------------------------------------------------------------------------


def test_exhaustion_monotone_and_stabilizes_on_model():
    mesh = make_mesh(nn=24, omega_min=None)
    prob = model_problem(mesh)
    reports = exhaustion_blowup_solve(prob, [2.0**k for k in range(10)], tol=0.02)
    changes = [r.interior_change for r in reports if r.interior_change is not None]
    # changes decrease once the data exceeds the interior scale
    peak = int(np.argmax(changes))
    tail = changes[peak:]
    assert all(b <= a * 1.05 for a, b in zip(tail, tail[1:]))
    # the blow-up limit dominates the exact power solution nodewise (the
    # large solution of the truncated domain sits above every solution with
    # finite boundary values); profile agreement is a truncation-limit
    # statement and is tested on the maximal-solution family below
    exact = mesh.rho ** (-mesh.domain.cone.blowup_exponent)
    last = reports[-1].solution.values
    assert np.min((last - exact)[mesh.free_mask]) >= -1e-6


def test_exhaustion_scaled_c0_gives_smaller_interior():
    mesh = make_mesh(nn=12)
    p1 = flat_cone_problem(mesh, 1.0, 1.0, 1.0)
    p4 = flat_cone_problem(mesh, 4.0, 1.0, 1.0)
    r1 = exhaustion_blowup_solve(p1, [1.0, 4.0, 16.0, 64.0], tol=None)
    r4 = exhaustion_blowup_solve(p4, [1.0, 4.0, 16.0, 64.0], tol=None)
    diff = r1[-1].solution.values - r4[-1].solution.values
    assert np.min(diff[mesh.free_mask]) >= -1e-9


def test_exhaustion_threshold_case_still_stabilizes():
    # the interior bound does not need the supercritical dimension
    mesh = make_mesh(n=4, d=1, nn=24)
    prob = flat_cone_problem(mesh, 1.0, 1.0, 1.0)
    reports = exhaustion_blowup_solve(prob, [2.0**k for k in range(12)], tol=0.05)
    changes = [r.interior_change for r in reports if r.interior_change is not None]
    peak = int(np.argmax(changes))
    tail = changes[peak:]
    assert all(b <= a * 1.05 for a, b in zip(tail, tail[1:]))


def test_exhaustion_requires_increasing_data():
    mesh = make_mesh(nn=10)
    prob = model_problem(mesh)
    with pytest.raises(ValueError):
        exhaustion_blowup_solve(prob, [4.0, 2.0])


def test_maximal_solution_matches_power_solution_on_common_subdomain():
    cone = ConeModel(3, 1, 1.0)
    dom = ReducedDomain(cone, 0.5, 2.0, cone.theta / 8)
    base = build_mesh(dom, 24, 20, 2.0)
    meshes = truncation_family(base, 10, nodes_per_octave=8)
    sol = exact_model_solution(cone)
    problems = [
        flat_cone_problem(m, sol.c0_star, sol.c1_star, 1.0) for m in meshes
    ]
    reports = maximal_solution(problems, data_sequence=[2.0**k for k in range(15)], tol=0.02)
    # the truncation limit dominates the power solution everywhere and locks
    # onto it on a fixed near-singular band once the face has receded
    last = reports[-1]
    mesh_f = meshes[-1]
    uf = last.solution.values
    exact = mesh_f.rho ** (-cone.blowup_exponent)
    xi = np.log(mesh_f.rho_polar)
    xi0, xi1 = np.log(0.5), np.log(2.0)
    inner = (xi >= xi0 + 0.25 * (xi1 - xi0)) & (xi <= xi1 - 0.25 * (xi1 - xi0))
    sel = mesh_f.free_mask & inner
    assert np.min((uf - exact)[sel]) >= -1e-6
    om0 = base.domain.omega_min
    band = sel & (mesh_f.omega >= om0 / 8) & (mesh_f.omega <= om0 / 2)
    assert np.any(band)
    assert np.max(np.abs(uf - exact)[band] / exact[band]) < 0.08


def test_maximal_solution_complete_verdict_coarse():
    cone = ConeModel(3, 1, 1.0)
    dom = ReducedDomain(cone, 0.5, 2.0, cone.theta / 8)
    base = build_mesh(dom, 28, 24, 2.0)
    meshes = truncation_family(base, 8, nodes_per_octave=8)
    problems = [flat_cone_problem(m, 1.0, 1.0, 1.0) for m in meshes]
    reports = maximal_solution(problems, data_sequence=[2.0**k for k in range(14)], tol=0.03)
    last = reports[-1]
    assert last.verdict == Verdict.COMPLETE_TYPE
    assert last.fitted_exponent == pytest.approx(0.5, abs=0.08)
    assert last.completeness_indicator > 0


def test_maximal_solution_bounded_verdict_threshold():
    # at the threshold dimension the capped-data exhaustion flattens: the
    # truncation-face influence of finite data vanishes linearly with depth
    cone = ConeModel(4, 1, 1.0)
    dom = ReducedDomain(cone, 0.5, 2.0, cone.theta / 8)
    base = build_mesh(dom, 32, 24, 2.0)
    meshes = truncation_family(base, 18, nodes_per_octave=8)
    problems = [flat_cone_problem(m, 1.0, 1.0, 1.0) for m in meshes]
    reports = maximal_solution(problems, data_sequence=[2.0**k for k in range(13)], tol=0.04)
    last = reports[-1]
    assert last.fitted_exponent <= 0.2
    assert last.near_gamma_variation < 0.05
    assert last.verdict == Verdict.BOUNDED_TYPE


# ---------------------------------------------------------------------------
# exponent fit
# ---------------------------------------------------------------------------


def test_fit_blowup_exponent_synthetic_power():
    mesh = make_mesh(nn=24, omega_min=0.05)
    u = Field(mesh, mesh.rho**-0.5)
    rho_mid = mesh.rho[(mesh.n_radial // 2) * mesh.n_angular:][: mesh.n_angular]
    fit = fit_blowup_exponent(u, (float(rho_mid.min()) * 1.01, float(rho_mid.max()) * 0.99))
    assert fit.alpha == pytest.approx(0.5, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)
    assert fit.completeness > 0


def test_fit_blowup_exponent_degenerate_window():
    mesh = make_mesh(nn=12)
    u = Field(mesh, mesh.rho**-0.5)
    with pytest.raises(ValueError):
        fit_blowup_exponent(u, (1e-6, 2e-6))
    with pytest.raises(ValueError):
        fit_blowup_exponent(u, (0.5, 0.1))


# ---------------------------------------------------------------------------
# barriers
# ---------------------------------------------------------------------------


def test_barrier_feasibility_matches_dimension_threshold():
    for n in (3, 4, 5, 6):
        for d in range(1, n):
            mesh = make_mesh(n=n, d=d, nn=10)
            prob = flat_cone_problem(mesh, 1.0, 1.0, 1.0)
            fit = barrier_psi_fit(prob)
            assert fit.feasible == (d > (n - 2) / 2)
            if fit.feasible:
                assert fit.C_star > 0
                # interior margin is d - (n-2)/2 on the flat cone
                expected = min(d - (n - 2) / 2,
                               d * 1.0 / ((n - 1) * math.sqrt(2.0)))
                assert fit.C1_margin == pytest.approx(expected, rel=1e-12)


def test_barrier_c_star_is_one_for_model_coefficients():
    # with (c0*, c1*) the power solution saturates the barrier: C_* = 1
    for n, d in [(3, 1), (4, 2), (5, 2), (6, 3)]:
        mesh = make_mesh(n=n, d=d, nn=10)
        sol = exact_model_solution(mesh.domain.cone)
        prob = flat_cone_problem(mesh, sol.c0_star, sol.c1_star, 1.0)
        fit = barrier_psi_fit(prob)
        assert fit.C_star == pytest.approx(1.0, rel=1e-12)


def test_barrier_threshold_case_infeasible():
    mesh = make_mesh(n=4, d=1, nn=10)
    prob = flat_cone_problem(mesh, 1.0, 1.0, 1.0)
    fit = barrier_psi_fit(prob)
    assert not fit.feasible
    assert fit.C_star == 0.0


def test_converged_solution_dominates_barrier():
    mesh = make_mesh(nn=16)
    prob = model_problem(mesh)
    rep, _ = monotone_iterate(prob, Field.zeros(mesh), pick_cap(prob), tol=1e-10)
    fit = barrier_psi_fit(prob, solution=rep.solution)
    assert fit.feasible
    assert fit.lower_bound_margin is not None
    assert fit.lower_bound_margin >= -1e-2 * fit.C_star  # discretization slack


def test_upper_barrier_on_power_solution():
    mesh = make_mesh(nn=32, omega_min=0.05)
    prob = model_problem(mesh)
    us = Field(mesh, mesh.rho ** (-mesh.domain.cone.blowup_exponent))
    rep = upper_barrier_check(us, prob)
    assert rep.ok
    assert rep.worst_ratio <= 1.0
    # implied constant within x4 of the exact coefficient 1 of the power solution
    assert rep.implied_C3 <= 4.0
    assert rep.barrier_inequality_margin >= -1e-9


def test_upper_barrier_constant_solution_trivially_dominated():
    mesh = make_mesh(nn=24, omega_min=0.05)
    prob = flat_cone_problem(mesh, 1.0, 1.0, 1.0)
    rep = upper_barrier_check(Field.full(mesh, 1.0), prob)
    assert rep.ok


def test_upper_barrier_stable_on_threshold_exhaustion_under_refinement():
    # near-singular upper bound for the threshold-dimension blow-up limit:
    # the comparison holds and the implied constant settles under refinement
    implied = []
    for nn in (20, 28, 36):
        mesh = make_mesh(n=4, d=1, omega_min=0.015, nn=nn)
        prob = flat_cone_problem(mesh, 1.0, 1.0, 1.0)
        reports = exhaustion_blowup_solve(prob, [4.0**k for k in range(7)], tol=None)
        rep = upper_barrier_check(reports[-1].solution, prob)
        assert rep.ok
        implied.append(rep.implied_C3)
        assert rep.empirical_C3 <= rep.implied_C3
    assert abs(implied[-1] - implied[0]) <= 0.25 * max(implied)


def test_verify_model_report_fields():
    mesh = make_mesh(nn=12)
    prob = model_problem(mesh)
    rep = solve_problem(prob, method="newton")
    assert rep.converged
    assert rep.completeness_indicator is not None and rep.completeness_indicator > 0
    assert rep.residual_sup < 1e-6
