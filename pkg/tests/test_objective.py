"""Objectives: smoothness constants, gradients and the lifted reformulation."""

import numpy as np
import pytest

from fedsim.dataset import parse_libsvm, partition_clients, synth_libsvm_text
from fedsim.objective import (
    LogisticClient,
    Problem,
    QuadraticClient,
    data_smoothness,
    lifted_grad,
    power_iteration_lmax,
    set_kappa,
    sigmoid,
    softplus,
)


def _fd_grad(fun, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


# -- numerics helpers ------------------------------------------------------


def test_softplus_matches_naive_and_is_stable():
    z = np.linspace(-30, 30, 101)
    np.testing.assert_allclose(softplus(z), np.log1p(np.exp(z)), rtol=1e-12)
    big = np.array([-1e4, 1e4])
    out = softplus(big)
    assert np.isfinite(out).all()
    assert out[0] == 0.0 and out[1] == 1e4


def test_sigmoid_matches_naive_and_is_stable():
    z = np.linspace(-30, 30, 101)
    np.testing.assert_allclose(sigmoid(z), 1.0 / (1.0 + np.exp(-z)), rtol=1e-12)
    out = sigmoid(np.array([-1e4, 1e4]))
    assert out[0] == 0.0 and out[1] == 1.0


def test_power_iteration_matches_eigvalsh(rng):
    for _ in range(10):
        Z = rng.standard_normal((rng.integers(2, 12), rng.integers(2, 9)))
        exact = float(np.linalg.eigvalsh(Z.T @ Z)[-1])
        np.testing.assert_allclose(power_iteration_lmax(Z), exact, rtol=1e-7)
    assert power_iteration_lmax(np.zeros((3, 4))) == 0.0


# -- logistic clients ------------------------------------------------------


def test_logistic_constants_against_eigendecomposition(logistic_problem):
    for c in logistic_problem.clients:
        lmax = float(np.linalg.eigvalsh(c.Z.T @ c.Z)[-1])
        np.testing.assert_allclose(c.data_lmax, lmax, rtol=1e-7)
        np.testing.assert_allclose(c.L, c.lam + lmax / (4 * c.N), rtol=1e-7)
        assert c.mu == c.lam


def test_logistic_value_matches_direct_formula(logistic_problem, rng):
    c = logistic_problem.clients[0]
    x = rng.standard_normal(c.d)
    direct = np.mean(np.log1p(np.exp(-c.Z @ x))) + 0.5 * c.lam * x @ x
    np.testing.assert_allclose(c.value(x), direct, rtol=1e-12)


def test_logistic_grad_matches_finite_differences(logistic_problem, rng):
    for c in logistic_problem.clients:
        x = rng.standard_normal(c.d)
        g = c.grad(x)
        err = np.linalg.norm(g - _fd_grad(c.value, x)) / np.linalg.norm(g)
        assert err <= 1e-6


def test_client_shape_validation(logistic_problem, quad_problem):
    with pytest.raises(ValueError, match="expected vector"):
        logistic_problem.clients[0].value(np.zeros(3))
    with pytest.raises(ValueError, match="expected vector"):
        quad_problem.clients[0].grad(np.zeros(3))


# -- quadratic clients -----------------------------------------------------


def test_quadratic_client_value_grad(rng):
    d = 5
    G = rng.standard_normal((d, d))
    Q = G @ G.T + 0.5 * np.eye(d)
    c_vec = rng.standard_normal(d)
    c = QuadraticClient(Q, c_vec)
    x = rng.standard_normal(d)
    np.testing.assert_allclose(c.value(x), 0.5 * x @ Q @ x - c_vec @ x, rtol=1e-12)
    np.testing.assert_allclose(c.grad(x), Q @ x - c_vec, rtol=1e-12)
    eigs = np.linalg.eigvalsh(Q)
    np.testing.assert_allclose([c.mu, c.L], [eigs[0], eigs[-1]], rtol=1e-12)


def test_quadratic_client_requires_positive_definite():
    with pytest.raises(ValueError, match="positive definite"):
        QuadraticClient(np.diag([1.0, -0.1]), np.zeros(2))


# -- the aggregated problem ------------------------------------------------


def test_problem_constants(quad_problem):
    p = quad_problem
    mus = np.array([c.mu for c in p.clients])
    Ls = np.array([c.L for c in p.clients])
    assert p.mu == pytest.approx(mus.mean())
    assert p.L_max == Ls.max() and p.L_min == Ls.min()
    assert p.L_bar == pytest.approx(Ls.mean())
    np.testing.assert_allclose(p.L_F, (Ls - mus) / p.M)
    assert p.L_F_max == p.L_F.max()


def test_problem_rejects_dimension_mismatch(rng):
    a = QuadraticClient(np.eye(3), np.zeros(3))
    b = QuadraticClient(np.eye(4), np.zeros(4))
    with pytest.raises(ValueError, match="disagree on dimension"):
        Problem([a, b])
    with pytest.raises(ValueError, match="at least one client"):
        Problem([])


def test_stacked_logistic_path_matches_per_client_loop(logistic_problem, rng):
    p = logistic_problem
    assert p._Z is not None  # the stacked fast path is active
    for _ in range(5):
        x = rng.standard_normal(p.d)
        loop_val = float(np.mean([c.value(x) for c in p.clients]))
        loop_grad = np.mean([c.grad(x) for c in p.clients], axis=0)
        np.testing.assert_allclose(p.value(x), loop_val, rtol=1e-12)
        np.testing.assert_allclose(p.grad(x), loop_grad, rtol=1e-10, atol=1e-14)


def test_lifted_gradients_recompose_full_gradient(quad_problem, rng):
    # grad f(x) = mu*x + sum_m grad F_m(x): the lifted split is exact
    p = quad_problem
    x = rng.standard_normal(p.d)
    total = p.mu * x + np.sum([lifted_grad(p, m, x) for m in range(p.M)], axis=0)
    np.testing.assert_allclose(total, p.grad(x), rtol=1e-10, atol=1e-12)


def test_lifted_grad_matches_finite_differences(logistic_problem, rng):
    p = logistic_problem
    for m in range(p.M):
        c = p.clients[m]
        x = rng.standard_normal(p.d)

        def lifted_val(z):
            return (c.value(z) - 0.5 * c.mu * z @ z) / p.M

        g = lifted_grad(p, m, x)
        err = np.linalg.norm(g - _fd_grad(lifted_val, x)) / max(np.linalg.norm(g), 1e-12)
        assert err <= 1e-6


# -- condition-number control ----------------------------------------------


def test_set_kappa_hits_target_exactly(logistic_problem):
    for kappa in (10.0, 1e3):
        p = set_kappa(logistic_problem, kappa)
        np.testing.assert_allclose(p.L_max / p.mu, kappa, rtol=1e-12)
    with pytest.raises(ValueError):
        set_kappa(logistic_problem, 1.0)


def test_data_smoothness_requires_logistic(quad_problem):
    with pytest.raises(TypeError):
        data_smoothness(quad_problem)
