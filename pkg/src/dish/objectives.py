"""
Local objectives and synthetic problem instances.

Each agent owns a smooth, strongly convex :class:`LocalObjective` with
value/gradient/Hessian oracles and certified curvature bounds ``s_i`` and
``l_i``. A :class:`ProblemInstance` bundles the objectives with a consensus
matrix and the centralized optimizer; it also evaluates all agents at once on
an ``(n, d)`` array of local copies, which is what the iteration engines use.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .topology import ConsensusMatrix, Graph, custom_matrix, degree_weights, erdos_renyi

__all__ = [
    "LocalObjective",
    "QuadraticObjective",
    "LeastSquaresObjective",
    "LogisticObjective",
    "ProblemInstance",
    "make_least_squares",
    "make_logistic",
    "make_quadratic_toy",
    "least_squares_from_data",
    "logistic_from_data",
    "dump_instance",
    "load_instance",
]


class LocalObjective:
    """Twice differentiable, strongly convex function of one agent.

    Subclasses set ``d``, ``s`` (strong convexity), ``l`` (smoothness) and
    ``constant_hessian``.
    """

    d: int
    s: float
    l: float
    constant_hessian = False

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def hessian(self, x):
        raise NotImplementedError


class QuadraticObjective(LocalObjective):
    """``0.5 * ||x - c||^2``."""

    constant_hessian = True

    def __init__(self, center):
        self.center = np.asarray(center, dtype=float).ravel()
        self.d = self.center.size
        self.s = self.l = 1.0

    def value(self, x):
        r = np.asarray(x, dtype=float) - self.center
        return 0.5 * float(r @ r)

    def gradient(self, x):
        return np.asarray(x, dtype=float) - self.center

    def hessian(self, x=None):
        return np.eye(self.d)


class LeastSquaresObjective(LocalObjective):
    """``||A x - y||^2 / (2N) + reg/2 ||x||^2``.

    `N` is the total number of samples in the network, not the local count.
    """

    constant_hessian = True

    def __init__(self, A, y, N, reg):
        self.A = np.asarray(A, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.N = float(N)
        self.reg = float(reg)
        self.d = self.A.shape[1]
        self._H = self.A.T @ self.A / self.N + self.reg * np.eye(self.d)
        eig = np.linalg.eigvalsh(self._H)
        self.s, self.l = float(eig[0]), float(eig[-1])

    def value(self, x):
        r = self.A @ x - self.y
        return float(r @ r) / (2 * self.N) + 0.5 * self.reg * float(x @ x)

    def gradient(self, x):
        return self.A.T @ (self.A @ x - self.y) / self.N + self.reg * x

    def hessian(self, x=None):
        return self._H.copy()


class LogisticObjective(LocalObjective):
    """Cross-entropy of a logistic model plus ``reg/2 ||x||^2``.

    Labels are in {0, 1}. Uses ``log(1 + e^z) - y z`` per sample, evaluated
    with ``logaddexp`` so large logits do not overflow.
    """

    def __init__(self, A, y, N, reg):
        if reg <= 0:
            raise ValueError("logistic objective needs a positive ridge penalty")
        self.A = np.asarray(A, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.N = float(N)
        self.reg = float(reg)
        self.d = self.A.shape[1]
        self.s = self.reg
        top = np.linalg.eigvalsh(self.A.T @ self.A)[-1] if self.A.size else 0.0
        self.l = self.reg + float(top) / (4 * self.N)

    def value(self, x):
        z = self.A @ x
        return float(np.sum(np.logaddexp(0.0, z) - self.y * z)) / self.N + 0.5 * self.reg * float(x @ x)

    def gradient(self, x):
        h = expit(self.A @ x)
        return self.A.T @ (h - self.y) / self.N + self.reg * x

    def hessian(self, x):
        h = expit(self.A @ x)
        w = h * (1.0 - h)
        return (self.A.T * w) @ self.A / self.N + self.reg * np.eye(self.d)


class _Stack:
    """Evaluate a list of objectives on an ``(n, d)`` array, one row per agent."""

    def __init__(self, objectives):
        self.objectives = objectives

    def values(self, X):
        return np.array([f.value(x) for f, x in zip(self.objectives, X)])

    def gradients(self, X):
        return np.array([f.gradient(x) for f, x in zip(self.objectives, X)])

    def hessians(self, X):
        return np.array([f.hessian(x) for f, x in zip(self.objectives, X)])

    def gradients_and_hessians(self, X):
        return self.gradients(X), self.hessians(X)


class _QuadraticStack(_Stack):
    def __init__(self, objectives):
        super().__init__(objectives)
        self.C = np.array([f.center for f in objectives])

    def values(self, X):
        return 0.5 * np.sum((X - self.C) ** 2, axis=1)

    def gradients(self, X):
        return X - self.C

    def hessians(self, X):
        n, d = self.C.shape
        return np.broadcast_to(np.eye(d), (n, d, d)).copy()


class _LinearModelStack(_Stack):
    def __init__(self, objectives):
        super().__init__(objectives)
        self.A = np.array([f.A for f in objectives])
        self.y = np.array([f.y for f in objectives])
        self.N = objectives[0].N
        self.reg = np.array([f.reg for f in objectives])
        self.At = np.ascontiguousarray(self.A.transpose(0, 2, 1))

    def logits(self, X):
        return np.matmul(self.A, X[..., None])[..., 0]

    def data_gradients(self, r):
        return np.matmul(self.At, r[..., None])[..., 0] / self.N


class _LeastSquaresStack(_LinearModelStack):
    def __init__(self, objectives):
        super().__init__(objectives)
        self.H = np.array([f.hessian() for f in objectives])

    def values(self, X):
        r = self.logits(X) - self.y
        return np.sum(r * r, axis=1) / (2 * self.N) + 0.5 * self.reg * np.sum(X * X, axis=1)

    def gradients(self, X):
        return self.data_gradients(self.logits(X) - self.y) + self.reg[:, None] * X

    def hessians(self, X):
        return self.H.copy()


class _LogisticStack(_LinearModelStack):
    def values(self, X):
        z = self.logits(X)
        data = np.sum(np.logaddexp(0.0, z) - self.y * z, axis=1) / self.N
        return data + 0.5 * self.reg * np.sum(X * X, axis=1)

    def gradients(self, X):
        h = expit(self.logits(X))
        return self.data_gradients(h - self.y) + self.reg[:, None] * X

    def _hessians_from(self, h):
        H = np.matmul(self.At * (h * (1.0 - h))[:, None, :], self.A) / self.N
        return H + self.reg[:, None, None] * np.eye(self.A.shape[2])

    def hessians(self, X):
        return self._hessians_from(expit(self.logits(X)))

    def gradients_and_hessians(self, X):
        h = expit(self.logits(X))
        return self.data_gradients(h - self.y) + self.reg[:, None] * X, self._hessians_from(h)


_STACKS = {
    QuadraticObjective: _QuadraticStack,
    LeastSquaresObjective: _LeastSquaresStack,
    LogisticObjective: _LogisticStack,
}


def _make_stack(objectives):
    kinds = {type(f) for f in objectives}
    if len(kinds) == 1:
        cls = _STACKS.get(kinds.pop())
        if cls is not None:
            try:
                return cls(objectives)
            except ValueError:  # ragged local datasets
                pass
    return _Stack(objectives)


@dataclass(eq=False)
class ProblemInstance:
    """Objectives, network and centralized optimum of one consensus problem.

    ``s`` and ``l`` are the network-wide curvature bounds ``min s_i`` and
    ``max l_i``.
    """

    objectives: list
    topology: ConsensusMatrix
    x_opt: np.ndarray
    kind: str = "custom"
    seed: int | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        dims = {f.d for f in self.objectives}
        if len(dims) != 1:
            raise ValueError("all objectives must share one dimension")
        if len(self.objectives) != self.topology.n:
            raise ValueError("one objective per node required")
        d = dims.pop()
        if self.topology.d != d:
            self.topology = self.topology.with_dimension(d)
        self.x_opt = np.asarray(self.x_opt, dtype=float)
        self._stack = _make_stack(self.objectives)

    @property
    def n(self):
        return len(self.objectives)

    @property
    def d(self):
        return self.objectives[0].d

    @property
    def s(self):
        return min(f.s for f in self.objectives)

    @property
    def l(self):
        return max(f.l for f in self.objectives)

    @property
    def s_local(self):
        return np.array([f.s for f in self.objectives])

    @property
    def l_local(self):
        return np.array([f.l for f in self.objectives])

    @property
    def constant_hessian(self):
        return all(f.constant_hessian for f in self.objectives)

    @property
    def x_opt_stacked(self):
        return np.tile(self.x_opt, self.n)

    # Oracles on X of shape (n, d); row i is agent i's copy.
    def values(self, X):
        return self._stack.values(np.asarray(X, dtype=float).reshape(self.n, self.d))

    def gradients(self, X):
        return self._stack.gradients(np.asarray(X, dtype=float).reshape(self.n, self.d))

    def hessians(self, X):
        return self._stack.hessians(np.asarray(X, dtype=float).reshape(self.n, self.d))

    def f(self, x):
        """Aggregate ``sum_i f_i(x_i)`` of a stacked vector."""
        return float(np.sum(self.values(x)))

    def optimal_value(self):
        return self.f(self.x_opt_stacked)

    def global_gradient(self, w):
        """Gradient of ``sum_i f_i`` at a single point ``w``."""
        return np.sum(self.gradients(np.tile(w, (self.n, 1))), axis=0)

    def global_hessian(self, w):
        return np.sum(self.hessians(np.tile(w, (self.n, 1))), axis=0)


def centralized_newton(instance_like, w0, tol=1e-12, max_iter=100):
    """Damped Newton on ``sum_i f_i``; `instance_like` needs global gradient/Hessian/value."""
    w = np.array(w0, dtype=float)
    grad, hess, value = instance_like
    for _ in range(max_iter):
        g = grad(w)
        if np.linalg.norm(g) <= tol:
            return w
        step = np.linalg.solve(hess(w), g)
        t, f0 = 1.0, value(w)
        # near the optimum the decrease drops below rounding of f itself
        slack = 1e-14 * max(1.0, abs(f0))
        while value(w - t * step) > f0 - 0.25 * t * (g @ step) + slack and t > 1e-10:
            t *= 0.5
        w = w - t * step
    if np.linalg.norm(grad(w)) > tol * 10:
        raise RuntimeError("centralized solve did not converge")
    return w


def _centralized(objectives, w0=None):
    n, d = len(objectives), objectives[0].d
    stack = _make_stack(objectives)

    def grad(w):
        return np.sum(stack.gradients(np.tile(w, (n, 1))), axis=0)

    def hess(w):
        return np.sum(stack.hessians(np.tile(w, (n, 1))), axis=0)

    def value(w):
        return float(np.sum(stack.values(np.tile(w, (n, 1)))))

    return centralized_newton((grad, hess, value), np.zeros(d) if w0 is None else w0)


def _network(n, p, seed, graph, topology):
    if topology is not None:
        return topology
    if graph is None:
        graph = erdos_renyi(n, p, seed)
    return degree_weights(graph)


def _data_rng(seed):
    # separate stream from the graph sampler, which consumes `seed` directly
    return np.random.default_rng([int(seed), 1])


def least_squares_from_data(As, ys, rho, topology, **meta):
    """Least-squares instance from explicit per-agent data.

    The ridge term ``rho/2 ||w||^2`` is split evenly, ``rho/(2n)`` per agent.
    """
    n = len(As)
    N = sum(np.shape(A)[0] for A in As)
    objectives = [LeastSquaresObjective(A, y, N, rho / n) for A, y in zip(As, ys)]
    if min(f.s for f in objectives) <= 0:
        raise ValueError("non-positive-definite Hessian; use rho > 0 or full-rank local features")
    G = sum(f.hessian() for f in objectives)
    b = sum(f.A.T @ f.y for f in objectives) / N
    x_opt = np.linalg.solve(G, b)
    # one refinement step against the stacked gradient
    x_opt -= np.linalg.solve(G, sum(f.gradient(x_opt) for f in objectives))
    return ProblemInstance(objectives, topology, x_opt, kind=meta.pop("kind", "least_squares"), **meta)


def logistic_from_data(As, ys, rho, topology, **meta):
    if rho <= 0:
        raise ValueError("rho must be positive for logistic regression")
    n = len(As)
    N = sum(np.shape(A)[0] for A in As)
    objectives = [LogisticObjective(A, y, N, rho / n) for A, y in zip(As, ys)]
    x_opt = _centralized(objectives)
    return ProblemInstance(objectives, topology, x_opt, kind=meta.pop("kind", "logistic"), **meta)


def _draw_linear_data(rng, n, d, N_i, scaling, loc=0.0, scale=1.0):
    theta = np.ones(d) if scaling is None else np.asarray(scaling, dtype=float)
    if theta.shape != (d,):
        raise ValueError("scaling must hold one entry per dimension")
    As, noise = [], []
    for _ in range(n):
        A_hat = rng.normal(loc, scale, size=(N_i, d))
        v = rng.normal(loc, scale, size=N_i)
        As.append(A_hat * theta)
        noise.append(v)
    w0 = rng.normal(loc, scale, size=d)
    return As, noise, w0


def make_least_squares(n=10, p=0.7, d=5, N_i=50, rho=1.0, scaling=None, seed=0, graph=None, topology=None):
    """Random regularized least squares over an Erdos-Renyi network.

    Draw order from the seeded generator: for each agent in index order the
    raw feature matrix (row-major) then its noise vector; the ground-truth
    weights come last. Features are scaled column-wise by `scaling`.
    """
    cm = _network(n, p, seed, graph, topology)
    rng = _data_rng(seed)
    As, noise, w0 = _draw_linear_data(rng, cm.n, d, N_i, scaling)
    ys = [A @ w0 + v for A, v in zip(As, noise)]
    params = dict(p=p, N_i=N_i, rho=rho, scaling=None if scaling is None else list(map(float, scaling)))
    return least_squares_from_data(As, ys, rho, cm, seed=seed, params=params)


def make_logistic(n=20, p=0.5, d=3, N_i=50, rho=1.0, scaling=None, seed=0, graph=None, topology=None, loc=0.0, scale=1.0):
    """Random regularized logistic regression over an Erdos-Renyi network.

    Labels are ``1[A_i w0 + v_i > 0]``: the larger of the two class logits
    under a softmax, with the negative class pinned at zero.
    """
    if rho <= 0:
        raise ValueError("rho must be positive for logistic regression")
    cm = _network(n, p, seed, graph, topology)
    rng = _data_rng(seed)
    As, noise, w0 = _draw_linear_data(rng, cm.n, d, N_i, scaling, loc, scale)
    ys = [(A @ w0 + v > 0).astype(float) for A, v in zip(As, noise)]
    params = dict(p=p, N_i=N_i, rho=rho, loc=loc, scale=scale,
                  scaling=None if scaling is None else list(map(float, scaling)))
    return logistic_from_data(As, ys, rho, cm, seed=seed, params=params)


def make_quadratic_toy(centers, topology=None, graph=None):
    """Agents ``0.5 ||x - c_i||^2`` whose consensus optimum is the mean center.

    Without an explicit network the agents sit on a ring (a path for n = 2).
    """
    from .topology import ring_graph

    C = np.atleast_2d(np.asarray(centers, dtype=float))
    if C.shape[0] == 1 and np.ndim(centers) == 1:
        C = C.T
    n = C.shape[0]
    if n < 2:
        raise ValueError("need at least two agents")
    if topology is None:
        topology = degree_weights(graph if graph is not None else ring_graph(n))
    objectives = [QuadraticObjective(c) for c in C]
    return ProblemInstance(objectives, topology, C.mean(axis=0), kind="quadratic_toy",
                           params=dict(centers=C.tolist()))


def dump_instance(instance, path=None):
    """Serialize an instance to JSON; returns the text and writes it if `path` is given."""
    data = {}
    if instance.kind in ("least_squares", "logistic"):
        data = dict(A=[f.A.tolist() for f in instance.objectives],
                    y=[f.y.tolist() for f in instance.objectives])
    doc = dict(
        kind=instance.kind,
        n=instance.n,
        d=instance.d,
        seed=instance.seed,
        params=instance.params,
        x_opt=instance.x_opt.tolist(),
        edges=[list(e) for e in instance.topology.graph.sorted_edges()],
        Z=instance.topology.Z.tolist(),
        data=data,
    )
    text = json.dumps(doc)
    if path is not None:
        Path(path).write_text(text)
    return text


def load_instance(source):
    """Inverse of :func:`dump_instance`; accepts a path or JSON text."""
    text = Path(source).read_text() if not str(source).lstrip().startswith("{") else str(source)
    doc = json.loads(text)
    g = Graph.from_edges(doc["n"], [tuple(e) for e in doc["edges"]])
    cm = custom_matrix(g, np.array(doc["Z"]), doc["d"])
    kind = doc["kind"]
    meta = dict(seed=doc["seed"], params=doc["params"])
    if kind == "quadratic_toy":
        inst = make_quadratic_toy(doc["params"]["centers"], topology=cm)
    elif kind == "least_squares":
        inst = least_squares_from_data(doc["data"]["A"], doc["data"]["y"], doc["params"]["rho"], cm, **meta)
    elif kind == "logistic":
        inst = logistic_from_data(doc["data"]["A"], doc["data"]["y"], doc["params"]["rho"], cm, **meta)
    else:
        raise ValueError(f"unknown instance kind {kind!r}")
    inst.x_opt = np.asarray(doc["x_opt"], dtype=float)
    return inst
