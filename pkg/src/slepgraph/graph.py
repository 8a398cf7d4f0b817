"""Graphs, Laplacians, symmetric eigendecomposition and the graph Fourier transform."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

COMBINATORIAL = "combinatorial"
NORMALIZED = "normalized"
LAPLACIAN_KINDS = (COMBINATORIAL, NORMALIZED)


class GraphError(ValueError):
    """Invalid graph construction or graph file."""


class DegenerateDegreeError(GraphError):
    """A node has zero degree where a degree normalisation is required."""


@dataclass(frozen=True)
class Graph:
    """Undirected weighted graph stored as a dense symmetric adjacency matrix."""

    adjacency: np.ndarray
    node_ids: Optional[tuple] = None

    def __post_init__(self):
        A = np.array(self.adjacency, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] == 0:
            raise GraphError(f"adjacency must be a non-empty square matrix, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise GraphError("adjacency contains non-finite weights")
        if not np.array_equal(A, A.T):
            raise GraphError("adjacency is not exactly symmetric")
        if np.any(A < 0):
            raise GraphError("edge weights must be non-negative")
        if np.any(np.diag(A) != 0):
            raise GraphError("self-loops are not allowed")
        A.setflags(write=False)
        object.__setattr__(self, "adjacency", A)
        if self.node_ids is not None:
            ids = tuple(str(s) for s in self.node_ids)
            if len(ids) != A.shape[0]:
                raise GraphError("node_ids length does not match n_nodes")
            object.__setattr__(self, "node_ids", ids)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @classmethod
    def from_edges(cls, n_nodes: int, edges: Sequence, node_ids=None) -> "Graph":
        """Densify an edge list of ``(i, j)`` or ``(i, j, w)`` entries.

        Duplicate edges (in either orientation) are rejected.
        """
        if int(n_nodes) <= 0:
            raise GraphError("n_nodes must be positive")
        n = int(n_nodes)
        A = np.zeros((n, n))
        seen = set()
        for k, e in enumerate(edges):
            if len(e) not in (2, 3):
                raise GraphError(f"edge {k} must have 2 or 3 entries")
            i, j = int(e[0]), int(e[1])
            w = float(e[2]) if len(e) == 3 else 1.0
            if not (0 <= i < n and 0 <= j < n):
                raise GraphError(f"edge {k} ({i}, {j}) out of range for {n} nodes")
            if i == j:
                raise GraphError(f"edge {k} is a self-loop on node {i}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise GraphError(f"duplicate edge {key}")
            seen.add(key)
            A[i, j] = A[j, i] = w
        return cls(A, node_ids)

    def edges(self) -> list:
        iu, ju = np.nonzero(np.triu(self.adjacency, 1))
        return [[int(i), int(j), float(self.adjacency[i, j])] for i, j in zip(iu, ju)]

    def permuted(self, perm) -> "Graph":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        ids = None if self.node_ids is None else tuple(self.node_ids[p] for p in perm)
        return Graph(self.adjacency[np.ix_(perm, perm)], ids)

    def connected_components(self) -> np.ndarray:
        """Component label per node (labels ordered by smallest member)."""
        n = self.n_nodes
        labels = -np.ones(n, dtype=int)
        nbrs = [np.nonzero(row)[0] for row in self.adjacency]
        current = 0
        for start in range(n):
            if labels[start] >= 0:
                continue
            stack = [start]
            labels[start] = current
            while stack:
                v = stack.pop()
                for u in nbrs[v]:
                    if labels[u] < 0:
                        labels[u] = current
                        stack.append(u)
            current += 1
        return labels

    def is_connected(self) -> bool:
        return int(self.connected_components().max()) == 0


def path_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def cycle_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def two_ring_graph(n: int) -> Graph:
    """Inner cycle (nodes ``0..n-1``) and outer cycle (``n..2n-1``) joined by spokes ``i -- n+i``."""
    edges = [(i, (i + 1) % n) for i in range(n)]
    edges += [(n + i, n + (i + 1) % n) for i in range(n)]
    edges += [(i, n + i) for i in range(n)]
    return Graph.from_edges(2 * n, edges)


def complete_graph(n: int) -> Graph:
    return Graph(np.ones((n, n)) - np.eye(n))


def save_graph_json(graph: Graph, path) -> None:
    doc = {"n_nodes": graph.n_nodes, "edges": graph.edges()}
    if graph.node_ids is not None:
        doc["node_ids"] = list(graph.node_ids)
    Path(path).write_text(json.dumps(doc))


def load_graph_json(path) -> Graph:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GraphError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "n_nodes" not in doc or "edges" not in doc:
        raise GraphError(f"{path}: expected keys 'n_nodes' and 'edges'")
    return Graph.from_edges(doc["n_nodes"], doc["edges"], doc.get("node_ids"))


def build_laplacian(graph: Graph, kind: str = COMBINATORIAL) -> np.ndarray:
    """Combinatorial ``D - A`` or symmetric normalised ``D^-1/2 (D - A) D^-1/2`` Laplacian."""
    A = graph.adjacency
    d = A.sum(axis=1)
    L = np.diag(d) - A
    if kind == COMBINATORIAL:
        return L
    if kind != NORMALIZED:
        raise ValueError(f"unknown Laplacian kind {kind!r}")
    zero = np.nonzero(d <= 0)[0]
    if zero.size:
        i = int(zero[0])
        name = graph.node_ids[i] if graph.node_ids is not None else str(i)
        raise DegenerateDegreeError(f"node {name} has zero degree; normalized Laplacian undefined")
    s = 1.0 / np.sqrt(d)
    Ln = s[:, None] * L * s[None, :]
    return 0.5 * (Ln + Ln.T)


def canonicalize_signs(V: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Flip columns so the first entry with ``|v| > tol`` is positive."""
    V = np.array(V, dtype=np.float64)
    for k in range(V.shape[1]):
        nz = np.nonzero(np.abs(V[:, k]) > tol)[0]
        if nz.size and V[nz[0], k] < 0:
            V[:, k] = -V[:, k]
    return V


# entries below this are treated as zero when fixing the eigenvector gauge
_SIGN_TOL = 1e-12


@dataclass(frozen=True)
class EigenSystem:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    laplacian_kind: Optional[str] = None

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]


def eig_sym(matrix: np.ndarray, laplacian_kind: Optional[str] = None) -> EigenSystem:
    """Eigendecomposition of a real symmetric matrix.

    Eigenvalues are returned in ascending order (stable, ties keep solver order)
    and every eigenvector has its first non-negligible entry positive.

    Raises
    ------
    ValueError
        If ``matrix`` is not square or deviates from symmetry by more than 1e-10.
    """
    M = np.asarray(matrix, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if M.size and np.max(np.abs(M - M.T)) > 1e-10:
        raise ValueError("matrix is not symmetric")
    M = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(M)
    order = np.argsort(w, kind="stable")
    w, V = w[order], V[:, order]
    V = canonicalize_signs(V, _SIGN_TOL)
    w.setflags(write=False)
    V.setflags(write=False)
    return EigenSystem(w, V, laplacian_kind)


def laplacian_eigensystem(graph: Graph, kind: str = COMBINATORIAL) -> EigenSystem:
    return eig_sym(build_laplacian(graph, kind), kind)


def _check_len(eig: EigenSystem, x: np.ndarray) -> None:
    if x.shape[0] != eig.n:
        raise ValueError(f"signal length {x.shape[0]} does not match graph size {eig.n}")


def gft(eig: EigenSystem, x) -> np.ndarray:
    """Graph Fourier coefficients ``U^T x`` (works column-wise on N x F inputs)."""
    x = np.asarray(x, dtype=np.float64)
    _check_len(eig, x)
    return eig.eigenvectors.T @ x


def igft(eig: EigenSystem, xhat) -> np.ndarray:
    xhat = np.asarray(xhat, dtype=np.float64)
    _check_len(eig, xhat)
    return eig.eigenvectors @ xhat


def graph_convolve(eig: EigenSystem, x, response) -> np.ndarray:
    """Filter ``x`` with the spectral response ``response`` (one value per eigenvalue)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(response, dtype=np.float64)
    _check_len(eig, x)
    if g.shape != (eig.n,):
        raise ValueError(f"spectral response must have length {eig.n}, got {g.shape}")
    xhat = gft(eig, x)
    if xhat.ndim == 1:
        return igft(eig, g * xhat)
    return igft(eig, g[:, None] * xhat)
