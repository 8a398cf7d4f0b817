"""Building blocks of the Slepian network: differentiable symmetric eigensolver,
Slepian filters, time embeddings and the first-order GCN baseline layer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph

RELU = "relu"
IDENTITY = "identity"

PERTURB_SEED = 20240917


class DegenerateSpectrumError(ArithmeticError):
    """Eigenvalues too close for stable eigenvector gradients."""


def perturbation_vector(K: int) -> np.ndarray:
    """Fixed-seed vector of ``K`` distinct values in (0, 1)."""
    rng = np.random.default_rng(PERTURB_SEED)
    return (rng.permutation(K) + 1.0) / (K + 1.0)


def eig_sym_with_grad(C, perturb_scale: float = 0.0, min_gap: float = 1e-12):
    """Eigendecomposition of ``C + perturb_scale * diag(rho)`` with a backward rule.

    Returns ascending eigenvalues, eigenvectors (first non-negligible entry
    positive) and ``backward(dvals, dvecs) -> dC``. ``dvals`` / ``dvecs`` may be
    ``None``. The returned cotangent is symmetric.

    For ``A = V diag(lam) V^T`` the adjoint is
    ``V (diag(dlam) + F * (V^T dV)) V^T`` with ``F[i, j] = 1 / (lam[j] - lam[i])``
    off the diagonal, symmetrised.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError("expected a square matrix")
    if np.max(np.abs(C - C.T), initial=0.0) > 1e-10:
        raise ValueError("matrix is not symmetric")
    K = C.shape[0]
    A = 0.5 * (C + C.T)
    if perturb_scale:
        A = A + perturb_scale * np.diag(perturbation_vector(K))
    lam, V = np.linalg.eigh(A)
    if K > 1:
        gap = float(np.min(np.diff(lam)))
        if gap < min_gap:
            raise DegenerateSpectrumError(f"eigengap {gap:.3e} below {min_gap:.1e} after perturbation")
    nz = np.argmax(np.abs(V) > 1e-12, axis=0)
    V = V * np.sign(V[nz, np.arange(K)])

    def backward(dlam=None, dV=None):
        inner = np.zeros((K, K))
        if dV is not None:
            diff = lam[None, :] - lam[:, None]
            np.fill_diagonal(diff, 1.0)
            F = 1.0 / diff
            np.fill_diagonal(F, 0.0)
            inner += F * (V.T @ dV)
        if dlam is not None:
            inner += np.diag(dlam)
        dA = V @ inner @ V.T
        return 0.5 * (dA + dA.T)

    return lam, V, backward


def slepian_filter(Z, theta, x) -> np.ndarray:
    """Filter in the Slepian domain: ``Z (theta * (Z^T x))``."""
    Z = np.asarray(Z, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if theta.shape != (Z.shape[1],) or x.shape[0] != Z.shape[0]:
        raise ValueError(f"shape mismatch: Z {Z.shape}, theta {theta.shape}, x {x.shape}")
    coeff = Z.T @ x
    if coeff.ndim == 1:
        return Z @ (theta * coeff)
    return Z @ (theta[:, None] * coeff)


@dataclass
class SlepConvLayer:
    """Diagonal Slepian-domain filters ``theta[i, j, :]`` from input channel i to output j."""

    theta: np.ndarray
    activation: str = RELU

    @property
    def in_channels(self) -> int:
        return self.theta.shape[0]

    @property
    def out_channels(self) -> int:
        return self.theta.shape[1]

    @property
    def K(self) -> int:
        return self.theta.shape[2]


def _act(x, activation):
    if activation == RELU:
        return np.maximum(x, 0.0)
    if activation == IDENTITY:
        return x
    raise ValueError(f"unknown activation {activation!r}")


def layer_forward_nodemajor(Hn, theta, Z, activation=RELU):
    """Layer on a node-major batch ``Hn`` of shape (N, B, p).

    Both projections become single matrix products in this layout. Returns
    ``(out, cache)`` with ``out`` of shape (N, B, q).
    """
    N, B, p = Hn.shape
    K = Z.shape[1]
    q = theta.shape[1]
    S = (Z.T @ Hn.reshape(N, B * p)).reshape(K, B, p)
    # per-frequency channel mixing: T[k] = S[k] @ theta[:, :, k]
    T = np.matmul(S, np.ascontiguousarray(theta.transpose(2, 0, 1)))  # (K, B, q)
    pre = (Z @ T.reshape(K, B * q)).reshape(N, B, q)
    return _act(pre, activation), (Hn, S, T, pre)


def layer_backward_nodemajor(dout, theta, Z, cache, activation=RELU):
    """Returns ``(dHn, dtheta, dZ)`` for :func:`layer_forward_nodemajor`."""
    Hn, S, T, pre = cache
    N, B, q = dout.shape
    K, _, p = S.shape
    dpre = (dout * (pre > 0) if activation == RELU else dout).reshape(N, B * q)
    dZ = dpre @ T.reshape(K, B * q).T
    dT = (Z.T @ dpre).reshape(K, B, q)
    dtheta = np.matmul(np.ascontiguousarray(S.transpose(0, 2, 1)), dT).transpose(1, 2, 0)
    dS = np.matmul(dT, np.ascontiguousarray(theta.transpose(2, 1, 0))).reshape(K, B * p)
    dZ += Hn.reshape(N, B * p) @ dS.T
    dHn = (Z @ dS).reshape(N, B, p)
    return dHn, dtheta, dZ


def slepnet_layer_forward(H, theta, Z, activation=RELU):
    """Batched layer. ``H`` is (B, N, p); returns ``(out, cache)``."""
    Hn = np.ascontiguousarray(np.asarray(H, dtype=np.float64).transpose(1, 0, 2))
    out, cache = layer_forward_nodemajor(Hn, theta, Z, activation)
    return out.transpose(1, 0, 2), cache


def slepnet_layer_backward(dout, theta, Z, cache, activation=RELU):
    """Returns ``(dH, dtheta, dZ)`` for :func:`slepnet_layer_forward`."""
    dHn, dtheta, dZ = layer_backward_nodemajor(np.ascontiguousarray(dout.transpose(1, 0, 2)),
                                               theta, Z, cache, activation)
    return dHn.transpose(1, 0, 2), dtheta, dZ


def slepnet_layer(H_in, layer: SlepConvLayer, Z) -> np.ndarray:
    """Output column j is ``act(Z sum_i diag(theta[i, j]) Z^T H_in[:, i])``."""
    H = np.asarray(H_in, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if H.ndim != 2 or H.shape[1] != layer.in_channels or H.shape[0] != Z.shape[0]:
        raise ValueError(f"input of shape {H.shape} does not fit layer with {layer.in_channels} channels")
    if Z.shape[1] != layer.K:
        raise ValueError("layer filter length does not match basis size")
    out, _ = slepnet_layer_forward(H[None], layer.theta, Z, layer.activation)
    return out[0]


def time_embedding(t: int, d: int) -> np.ndarray:
    """Sinusoidal position code: ``sin(t / 10000**(2i/d))`` at even slots, cosine at odd."""
    if d % 2:
        raise ValueError("embedding width must be even")
    i = np.arange(d // 2)
    angle = t / np.power(10000.0, 2.0 * i / d)
    out = np.empty(d)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


def gcn_propagation(graph: Graph) -> np.ndarray:
    """Renormalised propagation matrix ``D~^-1/2 (A + I) D~^-1/2``."""
    At = graph.adjacency + np.eye(graph.n_nodes)
    s = 1.0 / np.sqrt(At.sum(axis=1))
    return s[:, None] * At * s[None, :]


def baseline_gcn_layer(H_in, W, graph, activation=RELU) -> np.ndarray:
    """First-order GCN layer ``act(P H W)`` with the renormalised propagation ``P``."""
    H = np.asarray(H_in, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    P = graph if isinstance(graph, np.ndarray) else gcn_propagation(graph)
    if H.shape[0] != P.shape[0] or H.shape[1] != W.shape[0]:
        raise ValueError(f"shape mismatch: H {H.shape}, W {W.shape}, N={P.shape[0]}")
    return _act(P @ H @ W, activation)
