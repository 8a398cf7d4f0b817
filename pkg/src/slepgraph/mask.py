"""Spectral clustering and the cluster-level attention mask that feeds ``S_V``."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import NORMALIZED, Graph, build_laplacian, eig_sym

SIGMOID = "sigmoid"
HARDTANH = "hardtanh"


class ClusteringError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    kappa: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        if labels.min() < 0 or labels.max() >= self.kappa:
            raise ValueError("cluster label out of range")
        if np.unique(labels).size != self.kappa:
            raise ValueError("every cluster must be non-empty")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def M(self) -> np.ndarray:
        """kappa x N one-hot assignment matrix."""
        M = np.zeros((self.kappa, self.labels.size))
        M[self.labels, np.arange(self.labels.size)] = 1.0
        return M

    def permuted(self, perm) -> "ClusterAssignment":
        return ClusterAssignment(self.labels[np.asarray(perm)], self.kappa)


def _kmeans_pp_init(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers[c] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centers[c]) ** 2, axis=1))
    return centers


def kmeans(X, k: int, rng, max_iter: int = 100, tol: float = 1e-6):
    """Lloyd iterations from k-means++ seeds.

    Stops when the total center shift falls below ``tol`` relative to the center
    norm. Returns ``(labels, centers)``; a label vector with an empty cluster is
    returned as-is for the caller to handle.
    """
    X = np.asarray(X, dtype=np.float64)
    centers = _kmeans_pp_init(X, k, rng)
    labels = np.zeros(X.shape[0], dtype=int)
    for _ in range(max_iter):
        d2 = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(d2, axis=1)
        new = centers.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new[c] = X[members].mean(axis=0)
        shift = np.linalg.norm(new - centers)
        centers = new
        if shift <= tol * max(np.linalg.norm(centers), 1e-12):
            break
    d2 = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1), centers


def _relabel_by_first_member(labels):
    order = []
    for l in labels:
        if l not in order:
            order.append(l)
    remap = {old: new for new, old in enumerate(order)}
    return np.array([remap[l] for l in labels], dtype=int)


def spectral_cluster(graph: Graph, kappa: int, seed: int = 0, max_restarts: int = 5) -> ClusterAssignment:
    """Normalised spectral clustering.

    Embeds nodes with the first ``kappa`` eigenvectors of the normalised
    Laplacian, normalises rows to unit length and runs k-means. Cluster ids are
    ordered by their smallest member node, so the result is deterministic per
    ``seed``.
    """
    N = graph.n_nodes
    kappa = int(kappa)
    if kappa < 1 or kappa > N:
        raise ValueError(f"kappa={kappa} must be in [1, {N}]")
    if kappa == 1:
        return ClusterAssignment(np.zeros(N, dtype=int), 1)
    if kappa == N:
        return ClusterAssignment(np.arange(N), N)
    E = eig_sym(build_laplacian(graph, NORMALIZED)).eigenvectors[:, :kappa]
    norms = np.linalg.norm(E, axis=1, keepdims=True)
    E = E / np.where(norms > 0, norms, 1.0)
    rng = np.random.default_rng(seed)
    for _ in range(max_restarts + 1):
        labels, _ = kmeans(E, kappa, rng)
        if np.unique(labels).size == kappa:
            return ClusterAssignment(_relabel_by_first_member(labels), kappa)
    raise ClusteringError(f"k-means left an empty cluster after {max_restarts} restarts (kappa={kappa})")


@dataclass
class MaskParams:
    w: np.ndarray

    @classmethod
    def zeros(cls, kappa: int) -> "MaskParams":
        return cls(np.zeros(kappa))


def cluster_attention(params, activation: str = SIGMOID) -> np.ndarray:
    """Per-cluster attention in [0, 1]: ``sigmoid(w)`` or ``clip(0.5 + 0.5 w, 0, 1)``."""
    w = np.asarray(getattr(params, "w", params), dtype=np.float64)
    if activation == SIGMOID:
        # split by sign to avoid overflow in exp
        out = np.empty_like(w)
        pos = w >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-w[pos]))
        e = np.exp(w[~pos])
        out[~pos] = e / (1.0 + e)
        return out
    if activation == HARDTANH:
        return np.clip(0.5 + 0.5 * w, 0.0, 1.0)
    raise ValueError(f"unknown attention activation {activation!r}")


def cluster_attention_grad(w, activation: str = SIGMOID) -> np.ndarray:
    """Elementwise derivative of :func:`cluster_attention` with respect to ``w``."""
    w = np.asarray(w, dtype=np.float64)
    if activation == SIGMOID:
        a = cluster_attention(w, SIGMOID)
        return a * (1.0 - a)
    if activation == HARDTANH:
        return np.where((w > -1.0) & (w < 1.0), 0.5, 0.0)
    raise ValueError(f"unknown attention activation {activation!r}")


def node_mask(assign: ClusterAssignment, attention) -> np.ndarray:
    """Broadcast cluster attention to nodes (``m = M^T a``)."""
    a = np.asarray(attention, dtype=np.float64)
    if a.shape != (assign.kappa,):
        raise ValueError(f"attention must have length {assign.kappa}")
    return a[assign.labels]


def mask_iou(predicted, truth, threshold: float = 0.5) -> float:
    """Intersection over union of ``predicted > threshold`` and the hard ``truth`` mask."""
    p = np.asarray(predicted, dtype=np.float64) > threshold
    t = np.asarray(truth, dtype=np.float64) > 0.5
    if p.shape != t.shape:
        raise ValueError("mask sizes differ")
    union = np.count_nonzero(p | t)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & t) / union


def save_mask_json(path, attention, mask, threshold: float = 0.5) -> None:
    attention = np.asarray(attention, dtype=float)
    mask = np.asarray(mask, dtype=float)
    doc = {
        "kappa": int(attention.size),
        "attention": attention.tolist(),
        "mask": mask.tolist(),
        "selected_nodes": [int(i) for i in np.nonzero(mask > threshold)[0]],
    }
    Path(path).write_text(json.dumps(doc))


def load_mask_json(path) -> dict:
    doc = json.loads(Path(path).read_text())
    for key in ("kappa", "attention", "mask", "selected_nodes"):
        if key not in doc:
            raise ValueError(f"{path}: missing key {key!r}")
    return doc
