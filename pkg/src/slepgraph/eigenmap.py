"""Neural eigenmapping: regress Slepian coordinates from node identity.

A small MLP maps the indicator of node ``i`` to row ``i`` of a Slepian basis.
Before the learned layers the indicator is smoothed by a fixed number of lazy
random-walk steps on the graph. That keeps the input sparse and local (the
encoding of node ``i`` touches only its ``s``-hop neighbourhood, so inference
cost does not grow with ``N``) and lets nodes that were never trained on borrow
the first-layer rows of their trained neighbours.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .graph import Graph, canonicalize_signs, cycle_graph, laplacian_eigensystem
from .slepian import BandSelector, NodeSelector, SlepianBasis, slepians
from .train import AdamWState, adamw_step


class EigenmapConvergenceError(RuntimeError):
    """Training finished without reaching the MSE tolerance.

    The partially trained network and its final training MSE are attached.
    """

    def __init__(self, message, mse: float, net: "EigenmapNet"):
        super().__init__(message)
        self.mse = mse
        self.net = net


def diffusion_operator(graph: Graph) -> sp.csr_matrix:
    """Lazy random-walk matrix ``(I + D^-1 A) / 2`` in CSR form.

    Isolated nodes keep all their mass.
    """
    A = sp.csr_matrix(graph.adjacency)
    deg = np.asarray(A.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    stay = np.where(deg > 0, 0.5, 1.0)
    return (sp.diags(stay) + 0.5 * sp.diags(inv) @ A).tocsr()


@dataclass
class EigenmapNet:
    """MLP from diffused node indicators to ``K`` Slepian coordinates.

    Attributes
    ----------
    params : dict
        ``W1`` (N x h), ``b1``, ``W2`` (h x h), ``b2``, ``W3`` (h x K), ``b3``.
    diffusion : scipy.sparse.csr_matrix
        Fixed smoothing operator applied ``steps`` times to the indicator.
    scale : float
        Targets are regressed as ``scale * z`` so the outputs are O(1).
    trained_nodes : ndarray
        Node indices used as regression targets.
    """

    params: dict
    diffusion: sp.csr_matrix
    steps: int
    scale: float
    trained_nodes: np.ndarray
    history: list = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return self.params["W1"].shape[0]

    @property
    def K(self) -> int:
        return self.params["W3"].shape[1]

    def encode(self, nodes) -> sp.csr_matrix:
        """Sparse (b x N) matrix whose rows are the diffused indicators."""
        nodes = np.atleast_1d(np.asarray(nodes, dtype=int))
        if nodes.size and (nodes.min() < 0 or nodes.max() >= self.n_nodes):
            raise IndexError(f"node index out of range [0, {self.n_nodes})")
        E = sp.csr_matrix((np.ones(nodes.size), (np.arange(nodes.size), nodes)),
                          shape=(nodes.size, self.n_nodes))
        for _ in range(self.steps):
            E = E @ self.diffusion
        return E

    def _forward(self, E):
        P = self.params
        a1 = np.asarray(E @ P["W1"]) + P["b1"]
        h1 = np.maximum(a1, 0.0)
        a2 = h1 @ P["W2"] + P["b2"]
        h2 = np.maximum(a2, 0.0)
        out = h2 @ P["W3"] + P["b3"]
        return out, (E, a1, h1, a2, h2)

    def __call__(self, nodes) -> np.ndarray:
        """Predicted Slepian coordinates (b x K) for the given node indices."""
        out, _ = self._forward(self.encode(nodes))
        return out / self.scale

    def predict_all(self) -> np.ndarray:
        return self(np.arange(self.n_nodes))


def _init_params(n_nodes, hidden, K, rng):
    def unif(fan_in, shape):
        b = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-b, b, size=shape)

    # each diffused indicator sums to one, so the first layer sees O(1) inputs
    return {
        "W1": unif(1, (n_nodes, hidden)),
        "b1": np.zeros(hidden),
        "W2": unif(hidden, (hidden, hidden)),
        "b2": np.zeros(hidden),
        "W3": unif(hidden, (hidden, K)),
        "b3": np.zeros(K),
    }


def _backward(params, cache, dout):
    E, a1, h1, a2, h2 = cache
    g = {"W3": h2.T @ dout, "b3": dout.sum(axis=0)}
    d2 = (dout @ params["W3"].T) * (a2 > 0)
    g["W2"] = h1.T @ d2
    g["b2"] = d2.sum(axis=0)
    d1 = (d2 @ params["W2"].T) * (a1 > 0)
    g["W1"] = np.asarray(E.T @ d1)
    g["b1"] = d1.sum(axis=0)
    return g


def aligned_targets(basis) -> np.ndarray:
    """Basis columns with canonical signs (first non-negligible entry positive)."""
    Z = basis.Z if isinstance(basis, SlepianBasis) else np.asarray(basis, dtype=np.float64)
    return canonicalize_signs(Z, tol=1e-12)


def train_eigenmap(basis, graph: Graph, train_fraction: float = 1.0, epochs: int = 3000, seed: int = 0,
                   hidden: int = 256, lr: float = 1e-3, weight_decay: float = 0.0, steps: int = 8,
                   batch_size: Optional[int] = None, tol: float = 1e-3) -> EigenmapNet:
    """Fit an :class:`EigenmapNet` to the rows of ``basis`` on a random node subset.

    Parameters
    ----------
    basis : SlepianBasis or ndarray
        N x K target coordinates. Column signs are canonicalised first.
    graph : Graph
        Supplies the fixed diffusion applied to the node indicators.
    train_fraction : float
        Fraction of nodes (chosen with ``seed``) used as training targets.
    epochs : int
        Passes over the training nodes (full batch unless ``batch_size``).
    tol : float
        Required final training MSE.

    Raises
    ------
    EigenmapConvergenceError
        If the training MSE is still above ``tol`` after ``epochs``.
    """
    if not 0 < train_fraction <= 1:
        raise ValueError("train_fraction must lie in (0, 1]")
    Z = aligned_targets(basis)
    N, K = Z.shape
    if graph.n_nodes != N:
        raise ValueError(f"basis has {N} rows but the graph has {graph.n_nodes} nodes")
    rng = np.random.default_rng(seed)
    n_train = max(1, int(round(train_fraction * N)))
    nodes = np.sort(rng.permutation(N)[:n_train])
    scale = float(np.sqrt(N))
    net = EigenmapNet(_init_params(N, hidden, K, rng), diffusion_operator(graph), int(steps), scale, nodes)
    E_all = net.encode(nodes)
    Y_all = scale * Z[nodes]
    opt = AdamWState.zeros_like(net.params)
    bs = n_train if batch_size is None else int(batch_size)
    for epoch in range(epochs):
        order = rng.permutation(n_train) if bs < n_train else np.arange(n_train)
        for start in range(0, n_train, bs):
            idx = order[start:start + bs]
            out, cache = net._forward(E_all[idx])
            diff = out - Y_all[idx]
            grads = _backward(net.params, cache, 2.0 * diff / diff.size)
            adamw_step(net.params, grads, opt, lr, weight_decay)
        if epoch % 100 == 99 or epoch == epochs - 1:
            net.history.append(float(np.mean((net(nodes) - Z[nodes]) ** 2)))
    mse = float(np.mean((net(nodes) - Z[nodes]) ** 2)) if epochs else float(np.mean(Z[nodes] ** 2))
    if mse > tol:
        raise EigenmapConvergenceError(f"training MSE {mse:.3e} above {tol:.1e} after {epochs} epochs", mse, net)
    return net


def predict_coords(net: EigenmapNet, i: int) -> np.ndarray:
    """Predicted length-K Slepian coordinates of node ``i``."""
    i = int(i)
    if not 0 <= i < net.n_nodes:
        raise IndexError(f"node {i} out of range [0, {net.n_nodes})")
    return net([i])[0]


def column_correlations(pred: np.ndarray, exact: np.ndarray) -> np.ndarray:
    """Absolute Pearson correlation between matching columns (sign-insensitive)."""
    P = pred - pred.mean(axis=0)
    X = exact - exact.mean(axis=0)
    num = np.sum(P * X, axis=0)
    den = np.linalg.norm(P, axis=0) * np.linalg.norm(X, axis=0)
    return np.abs(num) / np.where(den > 0, den, 1.0)


def ring_fixture(n: int = 200, K: int = 10) -> tuple:
    """Cycle graph and its energy Slepians concentrated on the first half of the ring."""
    g = cycle_graph(n)
    eig = laplacian_eigensystem(g)
    basis = slepians(eig, BandSelector(K), NodeSelector.from_subset(range(n // 2), n))
    return g, basis


def _median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def benchmark_runtime(sizes, K: int = 10, repeats: int = 5, query_batch: int = 64, train_epochs: int = 50,
                      seed: int = 0) -> list:
    """Wall-clock medians of the exact basis versus eigenmap inference on ring graphs.

    The exact path is a dense Laplacian eigendecomposition followed by the
    Slepian eigenproblem. The eigenmap path is inference for a fixed batch of
    ``query_batch`` nodes on a briefly trained network, so its cost reflects a
    per-node lookup rather than the graph size. Returns rows
    ``{"N", "t_exact_ms", "t_eigenmap_ms"}``.
    """
    sizes = [int(n) for n in sizes]
    if sizes != sorted(sizes):
        raise ValueError("sizes must be sorted ascending")
    rows = []
    rng = np.random.default_rng(seed)
    for n in sizes:
        g = cycle_graph(n)
        nodes = NodeSelector.from_subset(range(n // 2), n)

        def exact():
            slepians(laplacian_eigensystem(g), BandSelector(K), nodes)

        t_exact = _median_time(exact, repeats)
        basis = slepians(laplacian_eigensystem(g), BandSelector(K), nodes)
        net = train_eigenmap(basis, g, train_fraction=min(1.0, 256 / n), epochs=train_epochs, seed=seed,
                             tol=np.inf)
        query = rng.integers(0, n, size=query_batch)
        t_map = _median_time(lambda: net(query), repeats)
        rows.append({"N": n, "t_exact_ms": 1e3 * t_exact, "t_eigenmap_ms": 1e3 * t_map})
    return rows


def write_benchmark_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "t_exact_ms", "t_eigenmap_ms"])
        for r in rows:
            w.writerow([r["N"], repr(r["t_exact_ms"]), repr(r["t_eigenmap_ms"])])
