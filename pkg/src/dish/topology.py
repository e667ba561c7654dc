"""
Network graphs and consensus matrices.

A :class:`ConsensusMatrix` wraps a symmetric doubly stochastic ``Z`` that
matches the sparsity of a connected undirected :class:`Graph`. The operator
``W = (I_n - Z) kron I_d`` acting on stacked vectors of length ``n * d`` is
applied blockwise by :func:`apply_W`; it is never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Graph",
    "ConsensusMatrix",
    "TopologyError",
    "erdos_renyi",
    "degree_weights",
    "custom_matrix",
    "apply_W",
    "path_graph",
    "ring_graph",
    "complete_graph",
    "star_graph",
    "write_edge_list",
    "read_edge_list",
    "export_matrix_csv",
]

_TOL = 1e-12
MAX_ATTEMPTS = 10_000


class TopologyError(ValueError):
    """Raised for invalid graphs or consensus matrices."""


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes ``0..n-1``.

    ``resamples`` counts how many disconnected draws were rejected when the
    graph came from :func:`erdos_renyi`.
    """

    n: int
    edges: frozenset
    resamples: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.n < 2:
            raise TopologyError("graph needs at least 2 nodes")
        normalized = set()
        for e in self.edges:
            i, j = tuple(e) if len(e) == 2 else (None, None)
            if i is None or i == j:
                raise TopologyError(f"self-loop or malformed edge {e!r}")
            i, j = int(i), int(j)
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise TopologyError(f"edge {e!r} out of range")
            normalized.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(normalized))

    @classmethod
    def from_edges(cls, n, edges, resamples=0):
        pairs = [tuple(e) for e in edges]
        keys = [(min(i, j), max(i, j)) for i, j in pairs]
        if len(set(keys)) != len(keys):
            raise TopologyError("duplicate edge")
        return cls(n, frozenset(keys), resamples)

    @property
    def num_edges(self):
        return len(self.edges)

    def sorted_edges(self):
        return sorted(self.edges)

    def adjacency(self):
        adj = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = True
        return adj

    def degrees(self):
        return self.adjacency().sum(axis=1)

    def neighbors(self, i):
        return [int(j) for j in np.flatnonzero(self.adjacency()[i])]

    def is_connected(self):
        adj = self.adjacency()
        seen = {0}
        frontier = [0]
        while frontier:
            i = frontier.pop()
            for j in np.flatnonzero(adj[i]):
                if j not in seen:
                    seen.add(int(j))
                    frontier.append(int(j))
        return len(seen) == self.n


def path_graph(n):
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def ring_graph(n):
    if n < 3:
        return path_graph(n)
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def complete_graph(n):
    return Graph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def star_graph(n):
    return Graph.from_edges(n, [(0, j) for j in range(1, n)])


def erdos_renyi(n, p, seed):
    """Sample a connected Erdos-Renyi graph G(n, p).

    Every unordered pair is kept independently with probability `p`. A
    disconnected draw is discarded and the generator is re-seeded with
    ``seed + 1``, ``seed + 2``, ... until a connected graph appears.

    Parameters
    ----------
    n : int
        Number of nodes, at least 2.
    p : float
        Edge probability in (0, 1].
    seed : int
        Seed of the first attempt.

    Returns
    -------
    Graph
        Connected graph; ``resamples`` holds the number of rejected draws.
    """
    if n < 2:
        raise TopologyError("graph needs at least 2 nodes")
    if not 0 < p <= 1:
        raise TopologyError("edge probability must lie in (0, 1]")
    iu, ju = np.triu_indices(n, k=1)
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng(seed + attempt)
        keep = rng.random(iu.size) < p
        g = Graph(n, frozenset(zip(iu[keep].tolist(), ju[keep].tolist())), attempt)
        if g.is_connected():
            return g
    raise TopologyError("graph generation failed")


@dataclass(frozen=True, eq=False)
class ConsensusMatrix:
    """Validated consensus matrix together with its graph.

    Attributes
    ----------
    graph : Graph
    Z : ndarray, shape (n, n)
    gamma : float
        Second largest eigenvalue of ``Z``.
    d : int
        Block size of the Kronecker lift ``W = (I - Z) kron I_d``.
    eigenvalues : ndarray
        Eigenvalues of ``Z`` in ascending order.
    """

    graph: Graph
    Z: np.ndarray
    gamma: float
    d: int
    eigenvalues: np.ndarray

    @property
    def n(self):
        return self.Z.shape[0]

    @property
    def spectral_gap(self):
        return 1.0 - self.gamma

    @property
    def sigma_min_plus(self):
        """Smallest positive eigenvalue of W, read off the spectrum of Z."""
        w = 1.0 - self.eigenvalues
        return float(np.min(w[w > 1e-10]))

    @property
    def off_diagonal(self):
        return self.Z - np.diag(np.diag(self.Z))

    def with_dimension(self, d):
        return ConsensusMatrix(self.graph, self.Z, self.gamma, int(d), self.eigenvalues)

    def dense_W(self):
        """Dense ``(I - Z) kron I_d``; only for tests and small pseudo-inverse work."""
        return np.kron(np.eye(self.n) - self.Z, np.eye(self.d))


def _finalize(g, Z, d):
    Z = np.array(Z, dtype=float)
    Z.setflags(write=False)
    eigs = np.linalg.eigvalsh(Z)
    eigs.setflags(write=False)
    return ConsensusMatrix(g, Z, float(eigs[-2]), int(d), eigs)


def _check_assumptions(g, Z):
    n = g.n
    if Z.shape != (n, n):
        raise TopologyError(f"matrix shape {Z.shape} does not match {n} nodes")
    if not np.all(np.isfinite(Z)):
        raise TopologyError("non-finite entries")
    if np.max(np.abs(Z - Z.T)) > _TOL:
        raise TopologyError("asymmetric")
    if np.max(np.abs(Z.sum(axis=1) - 1.0)) > _TOL:
        raise TopologyError("row sums")
    adj = g.adjacency()
    off = ~np.eye(n, dtype=bool)
    nonzero = Z != 0
    if np.any(nonzero[off] != adj[off]):
        raise TopologyError("sparsity mismatch")
    if np.any(np.diag(Z) <= 0):
        raise TopologyError("nonpositive diagonal")
    if np.any(Z[off & adj] < 0):
        raise TopologyError("negative off-diagonal weight")


def degree_weights(g, d=1):
    """Max-degree weights: ``1/(dmax+1)`` on edges, ``1 - deg_i/(dmax+1)`` on the diagonal."""
    if not g.is_connected():
        raise TopologyError("graph not connected")
    deg = g.degrees()
    w = 1.0 / (deg.max() + 1.0)
    Z = g.adjacency() * w
    Z[np.diag_indices(g.n)] = 1.0 - deg * w
    return _finalize(g, Z, d)


def custom_matrix(g, Z, d=1):
    if not g.is_connected():
        raise TopologyError("graph not connected")
    Z = np.asarray(Z, dtype=float)
    _check_assumptions(g, Z)
    return _finalize(g, Z, d)


def apply_W(cm, v):
    """Return ``((I_n - Z) kron I_d) v`` without forming the lifted matrix.

    `v` may be flat of length ``n * d`` or already shaped ``(n, d)``; the
    output has the same shape as the input.
    """
    v = np.asarray(v, dtype=float)
    n, d = cm.n, cm.d
    if v.size != n * d:
        raise TopologyError(f"dimension mismatch: expected {n * d} entries, got {v.size}")
    X = v.reshape(n, d)
    out = consensus_residual_blocks(cm.Z, X)
    return out.reshape(v.shape)


def consensus_residual_blocks(Z, X):
    # (1 - z_ii) x_i - sum_{j != i} z_ij x_j, the order agents use locally
    diag = np.diag(Z)
    return (1.0 - diag)[:, None] * X - (Z - np.diag(diag)) @ X


def write_edge_list(g, path):
    lines = [f"n={g.n}"] + [f"{i} {j}" for i, j in g.sorted_edges()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_list(path):
    text = Path(path).read_text().split("\n")
    header = text[0].strip()
    if not header.startswith("n="):
        raise TopologyError("edge list must start with 'n=<count>'")
    n = int(header[2:])
    edges = []
    for line in text[1:]:
        line = line.strip()
        if line:
            i, j = line.split()
            edges.append((int(i), int(j)))
    return Graph.from_edges(n, edges)


def export_matrix_csv(cm, path):
    rows = [",".join(f"{z:.17g}" for z in row) for row in cm.Z]
    Path(path).write_text("\n".join(rows) + "\n")
