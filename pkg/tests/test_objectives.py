import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dish.objectives import (
    LeastSquaresObjective,
    LogisticObjective,
    QuadraticObjective,
    dump_instance,
    least_squares_from_data,
    load_instance,
    logistic_from_data,
    make_least_squares,
    make_logistic,
    make_quadratic_toy,
)
from dish.topology import complete_graph, degree_weights, path_graph


def fd_gradient(f, x, h=1e-6):
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_jacobian(g, x, h=1e-6):
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((g(x + e) - g(x - e)) / (2 * h))
    return np.array(cols).T


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


GENERATORS = {
    "quadratic": lambda: make_quadratic_toy(np.random.default_rng(0).normal(size=(4, 3))),
    "least_squares": lambda: make_least_squares(n=4, p=0.8, d=3, N_i=15, rho=1.0, scaling=[3, 1, 0.3], seed=1),
    "logistic": lambda: make_logistic(n=4, p=0.8, d=3, N_i=15, rho=1.0, scaling=[3, 1, 0.3], seed=1),
}


@pytest.mark.parametrize("name", sorted(GENERATORS))
def test_derivatives_match_finite_differences(name):
    inst = GENERATORS[name]()
    rng = np.random.default_rng(3)
    for f in inst.objectives:
        for _ in range(20):
            x = rng.normal(size=f.d)
            assert rel(f.gradient(x), fd_gradient(f.value, x)) <= 1e-6
            assert rel(f.hessian(x), fd_jacobian(f.gradient, x)) <= 1e-6


@pytest.mark.parametrize("name", sorted(GENERATORS))
def test_hessian_eigenvalues_within_bounds(name):
    inst = GENERATORS[name]()
    rng = np.random.default_rng(4)
    for f in inst.objectives:
        assert 0 < f.s <= f.l
        for _ in range(20):
            ev = np.linalg.eigvalsh(f.hessian(rng.normal(scale=3, size=f.d)))
            assert ev[0] >= f.s - 1e-9 and ev[-1] <= f.l + 1e-9


@pytest.mark.parametrize("name", sorted(GENERATORS))
def test_batched_oracles_match_per_agent(name):
    inst = GENERATORS[name]()
    X = np.random.default_rng(5).normal(size=(inst.n, inst.d))
    np.testing.assert_allclose(inst.values(X), [f.value(x) for f, x in zip(inst.objectives, X)], rtol=1e-13)
    np.testing.assert_allclose(inst.gradients(X), [f.gradient(x) for f, x in zip(inst.objectives, X)],
                               rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(inst.hessians(X), [f.hessian(x) for f, x in zip(inst.objectives, X)],
                               rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("name", sorted(GENERATORS))
def test_first_order_optimality(name):
    inst = GENERATORS[name]()
    assert np.linalg.norm(inst.global_gradient(inst.x_opt)) <= 1e-10 * inst.n


def test_logistic_hessian_formula():
    rng = np.random.default_rng(6)
    A = rng.normal(size=(12, 3))
    y = (rng.random(12) > 0.5).astype(float)
    f = LogisticObjective(A, y, N=30, reg=0.2)
    x = rng.normal(size=3)
    h = 1 / (1 + np.exp(-A @ x))
    expected = A.T @ np.diag(h * (1 - h)) @ A / 30 + 0.2 * np.eye(3)
    np.testing.assert_allclose(f.hessian(x), expected, rtol=1e-12)


def test_logistic_is_stable_for_large_logits():
    A = np.array([[1000.0], [-1000.0]])
    f = LogisticObjective(A, np.array([0.0, 1.0]), N=2, reg=1.0)
    assert np.isfinite(f.value(np.array([5.0])))
    assert np.all(np.isfinite(f.gradient(np.array([5.0]))))


def test_least_squares_curvature_constants():
    A = np.diag([3.0, 1.0])
    f = LeastSquaresObjective(A, np.zeros(2), N=2, reg=0.5)
    assert f.s == pytest.approx(1.0 / 2 + 0.5)
    assert f.l == pytest.approx(9.0 / 2 + 0.5)


def test_least_squares_identity_noiseless():
    w0 = np.array([0.3, -1.2])
    cm = degree_weights(path_graph(3))
    inst = least_squares_from_data([np.eye(2)] * 3, [w0] * 3, 0.0, cm)
    np.testing.assert_allclose(inst.x_opt, w0, atol=1e-14)


def test_least_squares_rejects_singular_without_ridge():
    cm = degree_weights(path_graph(2))
    A = np.array([[1.0, 0.0]])
    with pytest.raises(ValueError, match="non-positive-definite"):
        least_squares_from_data([A, A], [np.ones(1), np.ones(1)], 0.0, cm)


def test_least_squares_optimum_against_gradient_descent():
    inst = make_least_squares(n=3, p=1.0, d=2, N_i=10, rho=1.0, seed=9)
    L = np.linalg.eigvalsh(inst.global_hessian(np.zeros(2)))[-1]
    w = np.zeros(2)
    for _ in range(200_000):
        g = inst.global_gradient(w)
        if np.linalg.norm(g) <= 1e-12:
            break
        w = w - g / L
    assert np.linalg.norm(w - inst.x_opt) <= 1e-8


def test_logistic_optimum_against_grid_search():
    inst = make_logistic(n=2, p=1.0, d=2, N_i=5, rho=1.0, seed=3)
    A = np.vstack([f.A for f in inst.objectives])
    y = np.concatenate([f.y for f in inst.objectives])
    N = A.shape[0]
    step = 1e-3
    axis = np.linspace(-3, 3, 6001)
    best = (np.inf, None)
    for start in range(0, axis.size, 200):
        w1 = axis[start:start + 200, None, None]
        w2 = axis[None, :, None]
        z = w1 * A[:, 0] + w2 * A[:, 1]
        F = np.sum(np.logaddexp(0.0, z) - y * z, axis=2) / N + 0.5 * (w1[..., 0] ** 2 + w2[..., 0] ** 2)
        i, j = np.unravel_index(np.argmin(F), F.shape)
        if F[i, j] < best[0]:
            best = (F[i, j], np.array([axis[start + i], axis[j]]))
    assert np.max(np.abs(best[1] - inst.x_opt)) <= step


def test_logistic_all_positive_labels_zero_features():
    cm = degree_weights(path_graph(2))
    inst = logistic_from_data([np.zeros((4, 2))] * 2, [np.ones(4)] * 2, 1.0, cm)
    np.testing.assert_allclose(inst.x_opt, 0.0, atol=1e-14)
    g = inst.objectives[0].gradient(np.array([0.7, -0.2])) - 0.5 * np.array([0.7, -0.2])
    np.testing.assert_allclose(g, 0.0, atol=1e-15)


def test_logistic_requires_positive_ridge():
    with pytest.raises(ValueError):
        make_logistic(n=3, p=1.0, d=2, N_i=5, rho=0.0)


def test_centralized_optimum_independent_of_start():
    from dish.objectives import _centralized

    inst = GENERATORS["logistic"]()
    other = _centralized(inst.objectives, w0=np.array([2.0, -3.0, 1.0]))
    assert np.linalg.norm(other - inst.x_opt) <= 1e-8


@pytest.mark.parametrize("centers, expected, value", [
    ([[0, 0], [2, 0]], [1, 0], 1.0),
    ([[1.5, -2.0]] * 3, [1.5, -2.0], 0.0),
    ([[1], [2], [6]], [3], 7.0),
])
def test_quadratic_toy_optimum(centers, expected, value):
    inst = make_quadratic_toy(centers)
    np.testing.assert_allclose(inst.x_opt, expected)
    assert inst.optimal_value() == pytest.approx(value)


def test_quadratic_objective_constants():
    f = QuadraticObjective([1.0, 2.0])
    assert f.s == f.l == 1.0
    np.testing.assert_array_equal(f.hessian(np.zeros(2)), np.eye(2))


def test_generation_is_reproducible():
    a = make_least_squares(n=5, p=0.7, d=3, N_i=8, seed=11)
    b = make_least_squares(n=5, p=0.7, d=3, N_i=8, seed=11)
    assert a.topology.graph == b.topology.graph
    for fa, fb in zip(a.objectives, b.objectives):
        assert np.array_equal(fa.A, fb.A) and np.array_equal(fa.y, fb.y)
    assert np.array_equal(a.x_opt, b.x_opt)


def test_draw_order():
    # per agent: feature matrix then noise; ground truth last
    from dish.objectives import _data_rng

    inst = make_least_squares(n=3, p=1.0, d=2, N_i=4, rho=1.0, scaling=[2.0, 0.5], seed=21)
    rng = _data_rng(21)
    for f in inst.objectives:
        A_hat = rng.normal(size=(4, 2))
        v = rng.normal(size=4)
        np.testing.assert_array_equal(f.A, A_hat * [2.0, 0.5])
        f.noise = v
    w0 = rng.normal(size=2)
    for f in inst.objectives:
        np.testing.assert_allclose(f.y, f.A @ w0 + f.noise, rtol=1e-15)


def test_ridge_is_split_across_agents():
    inst = make_least_squares(n=4, p=1.0, d=2, N_i=5, rho=2.0, seed=0)
    assert all(f.reg == pytest.approx(0.5) for f in inst.objectives)
    assert all(f.N == 20 for f in inst.objectives)


def test_instance_bounds_aggregate():
    inst = GENERATORS["least_squares"]()
    assert inst.s == min(f.s for f in inst.objectives)
    assert inst.l == max(f.l for f in inst.objectives)


@pytest.mark.parametrize("name", sorted(GENERATORS))
def test_dump_and_load_round_trip(name, tmp_path):
    inst = GENERATORS[name]()
    path = tmp_path / "inst.json"
    text = dump_instance(inst, path)
    doc = json.loads(text)
    assert {"kind", "n", "d", "seed", "params", "x_opt"} <= set(doc)
    back = load_instance(path)
    assert back.kind == inst.kind
    assert np.array_equal(back.x_opt, inst.x_opt)
    assert np.array_equal(back.topology.Z, inst.topology.Z)
    X = np.random.default_rng(0).normal(size=(inst.n, inst.d))
    np.testing.assert_allclose(back.gradients(X), inst.gradients(X), rtol=1e-15)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 5), d=st.integers(1, 3))
def test_sum_of_local_objectives_is_global(seed, n, d):
    inst = make_logistic(n=n, p=1.0, d=d, N_i=6, rho=1.0, seed=seed, graph=complete_graph(n))
    w = np.random.default_rng(seed).normal(size=d)
    A = np.vstack([f.A for f in inst.objectives])
    y = np.concatenate([f.y for f in inst.objectives])
    z = A @ w
    direct = np.sum(np.logaddexp(0, z) - y * z) / A.shape[0] + 0.5 * (w @ w)
    assert inst.f(np.tile(w, n)) == pytest.approx(direct, rel=1e-12)
