import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cascade_mdp import ctmc, singular as S
from cascade_mdp.errors import BoxViolation, GridTooLarge, Reducible
from cascade_mdp.singular import QpClass

from .conftest import random_generator

UNIFORM = np.full(3, 1 / 3)


# -- steady states -------------------------------------------------------------------

def test_two_state_steady():
    assert np.allclose(S.steady_state([[-1, 1], [1, -1]]), [0.5, 0.5])


def test_cat_steady_uniform():
    p = S.steady_state(S.cat_X(UNIFORM, np.zeros(3)))
    assert np.allclose(p, [1 / 6, 1 / 6, 1 / 6, 1 / 2], atol=1e-12)


def test_reducible():
    with pytest.raises(Reducible):
        S.steady_state(np.zeros((2, 2)))


def test_single_closed_class_accepted():
    # Transient states are allowed as long as one closed class remains.
    X = np.array([[-1.0, 0.0], [1.0, 0.0]])
    assert np.allclose(S.steady_state(X), [0.0, 1.0])


@given(st.integers(2, 6), st.integers(0, 2**31))
def test_steady_state_residual(n, seed):
    X = random_generator(np.random.default_rng(seed), n) + 0.01 * (np.ones((n, n)) - n * np.eye(n))
    p = S.steady_state(X)
    assert np.max(np.abs(X @ p)) < 1e-10 and abs(p.sum() - 1) < 1e-10


# -- cat steady state ----------------------------------------------------------------

@pytest.mark.parametrize("c,u,p", [
    ((1, 0, 0), (0, 0, 0), (0, 0.25, 0.25)),
    (UNIFORM, (0, 0, 0), (1 / 6, 1 / 6, 1 / 6)),
    ((0, 0.5, 0.5), (0.3, 1 / 6, -1 / 6), (1 / 6, 1 / 6, 1 / 6)),
])
def test_cat_p_examples(c, u, p):
    assert np.allclose(S.cat_p(c, u), p, atol=1e-12)
    assert np.allclose(S.steady_state(S.cat_X(c, u))[:3], p, atol=1e-10)


def test_cat_matrices_match_model_average():
    c, u = np.array([0.2, 0.3, 0.5]), np.array([0.1, -0.4, 0.5])
    X = S.cat_X(c, u)
    assert ctmc.is_generator(X)
    assert np.allclose(S.cat_p(c, u), S.steady_state(X)[:3], atol=1e-10)


def test_cat_box_violation():
    with pytest.raises(BoxViolation):
        S.cat_p(UNIFORM, (0.6, 0, 0))


@given(st.integers(0, 2**31))
def test_cat_p_against_steady_state(seed):
    rng = np.random.default_rng(seed)
    c, u = rng.dirichlet(np.ones(3)), rng.uniform(-0.5, 0.5, 3)
    assert np.allclose(S.cat_p(c, u), S.steady_state(S.cat_X(c, u))[:3], atol=1e-10)


# -- rank-one update -----------------------------------------------------------------

RING = np.array([[-2.0, 1.0, 1.0], [1.0, -2.0, 1.0], [1.0, 1.0, -2.0]])
F = np.array([0.0, -1.0, 1.0])  # mass leaves state 2 for state 3


def test_rank_one_zero_update():
    assert np.allclose(S.rank_one_steady(RING, F, 1, 0.0), S.steady_state(RING))


@pytest.mark.parametrize("u", [0.1, 1.0])
def test_rank_one_matches_direct(u):
    res = S.rank_one_steady(RING, F, 1, u, info=True)
    direct = S.steady_state(RING + u * np.outer(F, np.eye(3)[1]))
    assert np.max(np.abs(res.p - direct)) < 1e-8
    assert res.residual < 1e-8
    assert abs(res.p.sum() - 1) < 1e-12 and res.p.min() >= 0


# -- quadratic program ---------------------------------------------------------------

def test_qp_uniform_data():
    qp = S.build_qp(UNIFORM)
    assert np.allclose(qp.b, 0) and np.allclose(qp.f, 0) and qp.k == pytest.approx(0)


def test_qp_corner_data():
    qp = S.build_qp([1, 0, 0])
    assert np.allclose(qp.b, [-1 / 6, 1 / 12, 1 / 12])


@given(st.integers(0, 2**31))
def test_qp_invariants(seed):
    rng = np.random.default_rng(seed)
    c, u = rng.dirichlet(np.ones(3)), rng.uniform(-0.5, 0.5, 3)
    qp = S.build_qp(c)
    assert np.allclose(qp.H, 0.5 * qp.A.T @ qp.A, atol=1e-12)
    assert qp.k == pytest.approx(qp.b @ qp.b)
    assert qp.objective(u) == pytest.approx(float(np.sum(qp.residual(u) ** 2)), abs=1e-10)
    assert qp.objective(np.zeros(3)) == pytest.approx(qp.b @ qp.b, abs=1e-15)
    # Objective equals the distance of the steady marginal from the diversity target.
    Q, m = S.diversity_target(3)
    p_full = np.r_[S.cat_p(c, u), 0.5]
    assert qp.objective(u) == pytest.approx(float(np.sum((Q @ p_full - m) ** 2)), abs=1e-9)


def test_qp_rejects_bad_c():
    with pytest.raises(ValueError):
        S.build_qp([0.5, 0.5, 0.5])


def test_solve_uniform():
    sol = S.solve_box_qp(S.build_qp(UNIFORM))
    assert sol.eta_star <= 1e-8
    assert np.allclose(sol.u0, 0, atol=1e-12)
    assert sol.classification is QpClass.INTERIOR_ZERO


def test_solve_two_foods():
    sol = S.solve_box_qp(S.build_qp([0, 0.5, 0.5]))
    assert sol.eta_star <= 1e-8
    assert np.allclose(sol.u0[1:], [1 / 6, -1 / 6], atol=1e-8)
    assert sol.u0[0] == pytest.approx(0.0, abs=1e-8)  # free coordinate, minimum norm


def test_solve_single_pair():
    qp = S.build_qp([1, 0, 0])
    sol = S.solve_box_qp(qp)
    assert sol.eta_star == pytest.approx(1 / 24, abs=1e-10)
    assert sol.classification is QpClass.BOUNDARY_POSITIVE
    assert abs(sol.eta_star - S.qp_oracle_grid(qp, 0.01)[1]) < 1e-6


def test_solution_invariants():
    rng = np.random.default_rng(3)
    for _ in range(20):
        qp = S.build_qp(rng.dirichlet(np.ones(3)))
        sol = S.solve_box_qp(qp)
        assert np.all(np.abs(sol.u0) <= 0.5)
        assert sol.eta_star == pytest.approx(qp.objective(sol.u0), abs=1e-10)
        assert (sol.eta_star <= 1e-8) == (sol.classification is QpClass.INTERIOR_ZERO)


def test_min_norm_tie_break():
    # Every point of the optimal line has the same residual; the reported one
    # must be no longer than any other optimum found by perturbing along the null space.
    qp = S.build_qp([0.5, 0.3, 0.2])
    sol = S.solve_box_qp(qp)
    null = np.linalg.svd(qp.A)[2][-1]
    for t in np.linspace(-1, 1, 41):
        v = sol.u0 + t * null
        if np.all(np.abs(v) <= 0.5):
            assert v @ v >= sol.u0 @ sol.u0 - 1e-12


def test_oracle_examples():
    u, eta = S.qp_oracle_grid(S.build_qp(UNIFORM), 0.05)
    assert eta <= 1e-3
    _, eta = S.qp_oracle_grid(S.build_qp([1, 0, 0]), 0.01)
    assert abs(eta - 1 / 24) < 1e-4
    qp = S.build_qp([0.2, 0.3, 0.5], bounds=(0.0, 0.0))
    u, eta = S.qp_oracle_grid(qp, 0.01)
    assert np.array_equal(u, np.zeros(3)) and eta == pytest.approx(qp.b @ qp.b)


def test_oracle_grid_too_large():
    with pytest.raises(GridTooLarge):
        S.qp_oracle_grid(S.build_qp(UNIFORM), 1e-3, max_points=10**6)


def test_interior_margin():
    assert S.interior_margin(S.build_qp(UNIFORM)) == pytest.approx(0.5)
    assert S.interior_margin(S.build_qp([1, 0, 0])) is None
    assert not S.has_interior_solution(S.build_qp([0.7, 0.2, 0.1]))


@pytest.fixture(scope="module")
def sweep_rows():
    return S.sweep(20, oracle_step=0.01, claim=True)


def test_sweep_claim(sweep_rows):
    assert len(sweep_rows) == 231
    for row in sweep_rows:
        assert (row.solution.eta_star <= 1e-8) == row.interior, row.c


def test_sweep_against_oracle(sweep_rows):
    for row in sweep_rows:
        assert abs(row.solution.eta_star - row.oracle_eta) < 1e-6, row.c


def test_sweep_case_boundary(sweep_rows):
    for row in sweep_rows:
        if row.c.max() <= 2 / 3:
            assert row.solution.eta_star <= 1e-8, row.c
        else:
            assert row.solution.eta_star > 1e-8, row.c


def test_eta_increases_past_two_thirds():
    ms = np.linspace(0.7, 1.0, 7)
    etas = [S.solve_box_qp(S.build_qp([m, (1 - m) / 2, (1 - m) / 2])).eta_star for m in ms]
    assert np.all(np.diff(etas) > 0)


# -- state and costate ----------------------------------------------------------------

def test_closed_form_limits():
    pn, pi = S.singular_closed_form(3, 0.0)
    assert (pn, pi) == (1.0, 0.0)
    pn, pi = S.singular_closed_form(3, 50.0)
    assert pn == pytest.approx(0.5) and pi == pytest.approx(1 / 6)
    with pytest.raises(ValueError):
        S.singular_closed_form(1, 1.0)


def test_forward_marginal_matches_closed_form():
    diag = S.state_costate_integrate(UNIFORM, np.zeros(3), 1.0)
    pn, pi = S.singular_closed_form(3, diag.grid)
    assert np.max(np.abs(diag.p[:, 3] - pn)) < 1e-6
    assert np.max(np.abs(diag.p[:, :3] - pi[:, None])) < 1e-6


def test_singular_arc_diagnostics():
    diag = S.state_costate_integrate(UNIFORM, np.zeros(3), 20.0)
    w = diag.window(0.25)
    assert np.max(np.abs(diag.H[w])) < 1e-4
    assert np.max(np.abs(diag.sigma[w])) < 1e-4


def test_nonsingular_control_has_switching():
    # (1/2, 1/2, 1/2) is itself optimal for uniform c, so use a vertex that is not.
    diag = S.state_costate_integrate(UNIFORM, np.array([0.5, 0.5, -0.5]), 20.0)
    assert np.max(np.abs(diag.sigma)) > 0.01


def test_optimal_vertex_is_singular_too():
    assert S.solve_box_qp(S.build_qp(UNIFORM)).eta_star <= 1e-8
    assert S.build_qp(UNIFORM).objective(np.full(3, 0.5)) == pytest.approx(0.0, abs=1e-15)


def test_time_varying_control_and_box():
    diag = S.state_costate_integrate(UNIFORM, lambda t: np.full(3, 0.2 * math.sin(t)), 2.0, dt=1e-2)
    assert np.all(np.isfinite(diag.H))
    with pytest.raises(BoxViolation):
        S.state_costate_integrate(UNIFORM, np.full(3, 0.7), 1.0)


def test_binary_generalisation_target():
    Q, m = S.diversity_target(4)
    assert np.array_equal(np.diag(Q), [1, 1, 1, 1, 0])
    assert np.allclose(m, [1 / 8] * 4 + [0])
    diag = S.state_costate_integrate(np.full(6, 1 / 6), np.zeros(6), 1.0)
    pn, pi = S.singular_closed_form(4, diag.grid)
    assert np.max(np.abs(diag.p[:, 4] - pn)) < 1e-6
