import numpy as np
import pytest

from qgp.qp import kkt_residuals, solve_qp

from oracles import active_set_oracle, exhaustive_qp


def _random_qp(rng, n, m, p=0):
    B = rng.normal(size=(n, n))
    P = B @ B.T + 0.1 * np.eye(n)
    c = rng.normal(size=n)
    G = rng.normal(size=(m, n))
    x_feas = rng.normal(size=n)
    h = G @ x_feas - rng.uniform(0, 1, m)
    A = rng.normal(size=(p, n))
    b = A @ x_feas
    return P, c, G, h, A, b


def test_unconstrained_minimum_inside():
    # minimum at x = 1 lies inside x >= 0
    res = solve_qp(np.array([2.0]), np.array([-2.0]), np.eye(1), np.zeros(1))
    assert res.converged
    np.testing.assert_allclose(res.x, [1.0], atol=1e-8)


def test_bound_active():
    # minimum of (x + 1)^2 subject to x >= 0 is at the bound
    res = solve_qp(np.array([2.0]), np.array([2.0]), np.eye(1), np.zeros(1))
    np.testing.assert_allclose(res.x, [0.0], atol=1e-8)
    assert res.z[0] == pytest.approx(2.0, rel=1e-6)


def test_equality_only():
    P = np.eye(2)
    res = solve_qp(P, np.zeros(2), np.zeros((0, 2)), np.zeros(0), A=[[1.0, 1.0]], b=[2.0])
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_matches_exhaustive_enumeration(seed):
    rng = np.random.default_rng(seed)
    P, c, G, h, A, b = _random_qp(rng, 4, 6, p=seed % 2)
    res = solve_qp(P, c, G, h, A, b)
    x = exhaustive_qp(P, c, G, h, A, b)
    assert res.converged
    np.testing.assert_allclose(res.x, x, atol=1e-7)
    ref = 0.5 * x @ P @ x + c @ x
    assert res.objective == pytest.approx(ref, rel=1e-8, abs=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_matches_certified_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    P, c, G, h, A, b = _random_qp(rng, 30, 60, p=2)
    res = solve_qp(P, c, G, h, A, b)
    x = active_set_oracle(P, c, G, h, A, b)
    ref = 0.5 * x @ P @ x + c @ x
    assert res.objective == pytest.approx(ref, rel=1e-8)


def test_oracles_agree(rng):
    for _ in range(5):
        P, c, G, h, A, b = _random_qp(rng, 3, 5, p=1)
        np.testing.assert_allclose(active_set_oracle(P, c, G, h, A, b), exhaustive_qp(P, c, G, h, A, b), atol=1e-8)


def test_diagonal_objective_shortcut(rng):
    P, c, G, h, A, b = _random_qp(rng, 8, 12)
    d = np.diag(P).copy()
    a = solve_qp(d, c, G, h)
    b_ = solve_qp(np.diag(d), c, G, h)
    np.testing.assert_allclose(a.x, b_.x, atol=1e-9)


def test_kkt_residuals_at_solution(rng):
    P, c, G, h, A, b = _random_qp(rng, 10, 20, p=1)
    res = solve_qp(P, c, G, h, A, b)
    r = kkt_residuals(P, c, G, h, res.x, res.z, A, b, res.y)
    assert max(r.values()) <= 1e-8
    assert res.residuals["dual"] <= 1e-8


def test_iteration_cap_reports_nonconvergence(rng):
    P, c, G, h, A, b = _random_qp(rng, 10, 20)
    res = solve_qp(P, c, G, h, max_iter=1)
    assert not res.converged
