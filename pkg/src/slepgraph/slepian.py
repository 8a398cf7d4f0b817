"""Graph Slepian harmonics: band/node selectors, concentration matrices and bases.

Hatted (spectral) vectors live in R^K and are lifted to the node domain with the
first K Laplacian eigenvectors ``U_K``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import EigenSystem, canonicalize_signs

ENERGY = "energy"
EMBEDDED = "embedded"
VARIANTS = (ENERGY, EMBEDDED)


@dataclass(frozen=True)
class BandSelector:
    """Keep the ``K`` lowest graph frequencies."""

    K: int

    def __post_init__(self):
        if int(self.K) < 1:
            raise ValueError("bandwidth K must be >= 1")
        object.__setattr__(self, "K", int(self.K))


@dataclass(frozen=True)
class NodeSelector:
    """Per-node selection weights in [0, 1]; a hard subset uses 0/1 weights."""

    weights: np.ndarray

    def __post_init__(self):
        m = np.array(self.weights, dtype=np.float64).ravel()
        if m.size == 0 or not np.all(np.isfinite(m)):
            raise ValueError("node weights must be a non-empty finite vector")
        if np.any(m < 0) or np.any(m > 1):
            raise ValueError("node weights must lie in [0, 1]")
        if not np.any(m > 0):
            raise ValueError("node selector must select at least one node")
        m.setflags(write=False)
        object.__setattr__(self, "weights", m)

    @classmethod
    def from_subset(cls, subset, n_nodes: int) -> "NodeSelector":
        m = np.zeros(n_nodes)
        idx = np.asarray(list(subset), dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= n_nodes):
            raise ValueError("subset index out of range")
        m[idx] = 1.0
        return cls(m)

    @property
    def n_selected(self) -> int:
        return int(np.count_nonzero(self.weights > 0.5))

    @property
    def is_hard(self) -> bool:
        return bool(np.all((self.weights == 0) | (self.weights == 1)))

    @property
    def subset(self) -> np.ndarray:
        return np.nonzero(self.weights > 0.5)[0]


@dataclass(frozen=True)
class SlepianBasis:
    """Slepian harmonics as the columns of ``Z`` with their concentration values.

    ``values`` holds energy concentrations (descending) for the energy variant or
    embedded distances (ascending) for the embedded variant; ``coefficients`` are
    the hatted vectors so that ``Z = U_K @ coefficients`` (times ``S_V`` when
    ``spacelimited``).
    """

    Z: np.ndarray
    values: np.ndarray
    variant: str
    band: BandSelector
    nodes: NodeSelector
    coefficients: np.ndarray
    spacelimited: bool = False

    @property
    def K(self) -> int:
        return self.Z.shape[1]


def _check(eig: EigenSystem, band: BandSelector, nodes: NodeSelector) -> int:
    N = eig.n
    if band.K > N:
        raise ValueError(f"bandwidth K={band.K} exceeds number of nodes N={N}")
    if nodes.weights.shape[0] != N:
        raise ValueError(f"node selector has {nodes.weights.shape[0]} entries, graph has {N}")
    return N


def selection_matrices(band: BandSelector, nodes: NodeSelector, N: int):
    """Diagonal band-selection ``S_B`` and node-selection ``S_V`` matrices (N x N)."""
    if band.K > N:
        raise ValueError(f"bandwidth K={band.K} exceeds N={N}")
    if nodes.weights.shape[0] != N:
        raise ValueError("node selector length does not match N")
    sb = np.zeros(N)
    sb[: band.K] = 1.0
    return np.diag(sb), np.diag(nodes.weights.copy())


def concentration_matrix(eig: EigenSystem, band: BandSelector, nodes: NodeSelector) -> np.ndarray:
    """K x K block ``U_K^T S_V U_K`` of the energy-concentration operator."""
    _check(eig, band, nodes)
    UK = eig.eigenvectors[:, : band.K]
    C = UK.T @ (nodes.weights[:, None] * UK)
    return 0.5 * (C + C.T)


def embedded_concentration_matrix(eig: EigenSystem, band: BandSelector, nodes: NodeSelector) -> np.ndarray:
    """``Lambda_K^1/2 C Lambda_K^1/2``.

    Eigenvalues at roundoff level (including tiny negatives) are treated as
    exact zeros so a connected graph's constant mode drops out cleanly.
    """
    C = concentration_matrix(eig, band, nodes)
    lam = eig.eigenvalues[: band.K]
    floor = 1e-12 * max(1.0, float(np.abs(eig.eigenvalues).max()))
    s = np.sqrt(np.where(lam <= floor, 0.0, lam))
    return s[:, None] * C * s[None, :]


def _sorted_eigh(C: np.ndarray, descending: bool):
    w, V = np.linalg.eigh(C)
    # stable sort on (value, original index); negate for descending keeps index tie-break
    order = np.argsort(-w if descending else w, kind="stable")
    return w[order], canonicalize_signs(V[:, order], 1e-12)


def slepians_energy(eig: EigenSystem, band: BandSelector, nodes: NodeSelector) -> SlepianBasis:
    """Slepians maximising in-subset energy; columns sorted by concentration, descending."""
    C = concentration_matrix(eig, band, nodes)
    mu, V = _sorted_eigh(C, descending=True)
    mu = np.clip(mu, 0.0, None)
    Z = eig.eigenvectors[:, : band.K] @ V
    return SlepianBasis(Z, mu, ENERGY, band, nodes, V)


def slepians_embedded(eig: EigenSystem, band: BandSelector, nodes: NodeSelector) -> SlepianBasis:
    """Slepians minimising the modified embedded distance; sorted ascending."""
    Cemb = embedded_concentration_matrix(eig, band, nodes)
    xi, V = _sorted_eigh(Cemb, descending=False)
    xi = np.clip(xi, 0.0, None)
    Z = eig.eigenvectors[:, : band.K] @ V
    return SlepianBasis(Z, xi, EMBEDDED, band, nodes, V)


def slepians(eig, band, nodes, variant: str = ENERGY) -> SlepianBasis:
    if variant == ENERGY:
        return slepians_energy(eig, band, nodes)
    if variant == EMBEDDED:
        return slepians_embedded(eig, band, nodes)
    raise ValueError(f"unknown Slepian variant {variant!r}")


def spacelimited_slepians(eig: EigenSystem, band: BandSelector, nodes: NodeSelector) -> SlepianBasis:
    """Energy Slepians restricted to the node subset: columns ``S_V U_K zhat``.

    Column squared norms equal the concentrations. Only hard (0/1) selectors are
    accepted.
    """
    if not nodes.is_hard:
        raise ValueError("spacelimited Slepians require a hard (0/1) node selector")
    base = slepians_energy(eig, band, nodes)
    Z = nodes.weights[:, None] * base.Z
    return SlepianBasis(Z, base.values, ENERGY, band, nodes, base.coefficients, spacelimited=True)


def subset_energy(signal, nodes: NodeSelector) -> float:
    x = np.asarray(signal, dtype=np.float64)
    if x.shape != nodes.weights.shape:
        raise ValueError("signal and selector lengths differ")
    return float(np.sum(nodes.weights * x * x))


def save_basis_csv(basis: SlepianBasis, path) -> None:
    """One header row, then one row per harmonic: ``k, value, z_k(0), ..., z_k(N-1)``."""
    N = basis.Z.shape[0]
    name = "mu" if basis.variant == ENERGY else "xi"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", name] + [f"z{i}" for i in range(N)])
        for k in range(basis.K):
            w.writerow([k, repr(float(basis.values[k]))] + [repr(float(v)) for v in basis.Z[:, k]])


def load_basis_csv(path):
    """Return ``(values, Z)`` from a basis CSV written by :func:`save_basis_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = np.array([[float(v) for v in r] for r in rows[1:]])
    if body.size == 0:
        return np.zeros(0), np.zeros((len(rows[0]) - 2, 0))
    return body[:, 1], body[:, 2:].T
