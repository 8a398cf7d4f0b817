import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_graph
from slepgraph.graph import build_laplacian, cycle_graph, laplacian_eigensystem, path_graph, two_ring_graph
from slepgraph.slepian import (
    BandSelector,
    NodeSelector,
    concentration_matrix,
    embedded_concentration_matrix,
    load_basis_csv,
    save_basis_csv,
    selection_matrices,
    slepians,
    slepians_embedded,
    slepians_energy,
    spacelimited_slepians,
    subset_energy,
)


@pytest.fixture
def path3():
    return laplacian_eigensystem(path_graph(3))


@pytest.fixture
def first_two():
    # the first two nodes of the path (0-based indices 0 and 1)
    return NodeSelector.from_subset([0, 1], 3)


# -- selectors ----------------------------------------------------------------

def test_selection_matrices_definition():
    SB, SV = selection_matrices(BandSelector(2), NodeSelector.from_subset([1], 3), 3)
    np.testing.assert_array_equal(SB, np.diag([1.0, 1, 0]))
    np.testing.assert_array_equal(SV, np.diag([0.0, 1, 0]))


def test_selection_matrices_full_and_soft():
    SB, SV = selection_matrices(BandSelector(4), NodeSelector(np.ones(4)), 4)
    np.testing.assert_array_equal(SB, np.eye(4))
    np.testing.assert_array_equal(SV, np.eye(4))
    _, SV = selection_matrices(BandSelector(1), NodeSelector([0.5, 1, 0]), 3)
    np.testing.assert_array_equal(SV, np.diag([0.5, 1, 0]))


def test_selection_matrices_K_too_large():
    with pytest.raises(ValueError):
        selection_matrices(BandSelector(4), NodeSelector(np.ones(3)), 3)


def test_node_selector_validation():
    with pytest.raises(ValueError):
        NodeSelector([0.0, 0.0])
    with pytest.raises(ValueError):
        NodeSelector([1.2, 0.0])
    sel = NodeSelector([0.2, 0.7, 1.0])
    assert sel.n_selected == 2 and not sel.is_hard


# -- concentration matrices ---------------------------------------------------

def test_C_full_selection_identity():
    rng = np.random.default_rng(0)
    eig = laplacian_eigensystem(random_graph(rng, 10))
    np.testing.assert_allclose(concentration_matrix(eig, BandSelector(6), NodeSelector(np.ones(10))),
                               np.eye(6), atol=1e-12)


def test_C_path3(path3, first_two, oracle):
    C = concentration_matrix(path3, BandSelector(2), first_two)
    np.testing.assert_allclose(C, oracle["path3_C"], atol=1e-12)


def test_C_uniform_soft_half():
    eig = laplacian_eigensystem(cycle_graph(7))
    C = concentration_matrix(eig, BandSelector(4), NodeSelector(np.full(7, 0.5)))
    np.testing.assert_allclose(C, 0.5 * np.eye(4), atol=1e-12)


def test_C_trace_and_psd():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = int(rng.integers(3, 20))
        eig = laplacian_eigensystem(random_graph(rng, n))
        K = int(rng.integers(1, n + 1))
        m = rng.random(n)
        C = concentration_matrix(eig, BandSelector(K), NodeSelector(m))
        UK = eig.eigenvectors[:, :K]
        assert abs(np.trace(C) - np.sum(m[:, None] * UK**2)) <= 1e-10
        assert np.linalg.eigvalsh(C).min() >= -1e-12


def test_C_emb_examples(path3, first_two, oracle):
    np.testing.assert_allclose(embedded_concentration_matrix(path3, BandSelector(2), first_two),
                               oracle["path3_C_emb"], atol=1e-12)
    eig = laplacian_eigensystem(cycle_graph(6))
    full = NodeSelector(np.ones(6))
    np.testing.assert_allclose(embedded_concentration_matrix(eig, BandSelector(4), full),
                               np.diag(eig.eigenvalues[:4]), atol=1e-12)
    np.testing.assert_allclose(embedded_concentration_matrix(eig, BandSelector(1), first_or_any(6)), [[0.0]],
                               atol=1e-15)


def first_or_any(n):
    return NodeSelector.from_subset([0], n)


# -- Slepian bases ------------------------------------------------------------

def test_path3_energy_fixture(path3, first_two, oracle):
    basis = slepians_energy(path3, BandSelector(2), first_two)
    np.testing.assert_allclose(basis.values, oracle["path3_mu"], atol=1e-10)
    top = basis.Z[:, 0]
    assert abs(top[2]) <= 1e-10
    np.testing.assert_allclose(top, oracle["path3_top_slepian"], atol=1e-10)
    np.testing.assert_allclose(top, oracle["path3_top_slepian_expected_direction"], atol=1e-10)
    assert abs(subset_energy(top, first_two) - 1.0) <= 1e-10


def test_path3_embedded_fixture(path3, first_two, oracle):
    basis = slepians_embedded(path3, BandSelector(2), first_two)
    np.testing.assert_allclose(basis.values, oracle["path3_xi"], atol=1e-12)


def test_full_selection_energy_and_embedded():
    eig = laplacian_eigensystem(path_graph(8))
    full = NodeSelector(np.ones(8))
    e = slepians_energy(eig, BandSelector(5), full)
    np.testing.assert_allclose(e.values, np.ones(5), atol=1e-12)
    UK = eig.eigenvectors[:, :5]
    # same span as the first K Fourier modes
    np.testing.assert_allclose(UK @ UK.T @ e.Z, e.Z, atol=1e-10)
    b = slepians_embedded(eig, BandSelector(5), full)
    np.testing.assert_allclose(b.values, eig.eigenvalues[:5], atol=1e-10)
    np.testing.assert_allclose(np.abs(b.Z.T @ UK), np.eye(5), atol=1e-8)


def test_K1_connected():
    eig = laplacian_eigensystem(cycle_graph(10))
    sel = NodeSelector.from_subset([0, 1, 2, 3], 10)
    e = slepians_energy(eig, BandSelector(1), sel)
    np.testing.assert_allclose(e.Z[:, 0], np.full(10, 1 / np.sqrt(10)), atol=1e-12)
    assert abs(e.values[0] - 0.4) <= 1e-12
    np.testing.assert_allclose(slepians_embedded(eig, BandSelector(1), sel).values, [0.0], atol=1e-15)


def test_unknown_variant():
    eig = laplacian_eigensystem(path_graph(3))
    with pytest.raises(ValueError):
        slepians(eig, BandSelector(2), NodeSelector(np.ones(3)), "fourier")


def test_K_larger_than_N():
    eig = laplacian_eigensystem(path_graph(3))
    with pytest.raises(ValueError):
        slepians(eig, BandSelector(4), NodeSelector(np.ones(3)))


def _basis_properties(rng, n, variant):
    eig = laplacian_eigensystem(random_graph(rng, n))
    K = int(rng.integers(1, n + 1))
    size = int(rng.integers(1, n + 1))
    sel = NodeSelector.from_subset(rng.choice(n, size=size, replace=False), n)
    basis = slepians(eig, BandSelector(K), sel, variant)
    Z = basis.Z
    assert np.abs(Z.T @ Z - np.eye(K)).max() <= 1e-8
    tail = eig.eigenvectors[:, K:].T @ Z
    assert np.linalg.norm(tail, axis=0).max(initial=0.0) <= 1e-8
    return eig, sel, basis


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 30), st.sampled_from(["energy", "embedded"]))
def test_basis_invariants(seed, n, variant):
    rng = np.random.default_rng(seed)
    eig, sel, basis = _basis_properties(rng, n, variant)
    if variant == "energy":
        mu = basis.values
        assert np.all(mu >= -1e-10) and np.all(mu <= 1 + 1e-10)
        assert np.all(np.diff(mu) <= 1e-12)
        C = concentration_matrix(eig, basis.band, sel)
        assert abs(np.trace(C) - mu.sum()) <= 1e-10
        G = basis.Z.T @ (sel.weights[:, None] * basis.Z)
        np.testing.assert_allclose(G, np.diag(mu), atol=1e-8)
    else:
        assert np.all(basis.values >= -1e-10)
        assert np.all(np.diff(basis.values) >= -1e-12)


def test_rayleigh_optimality():
    rng = np.random.default_rng(9)
    eig = laplacian_eigensystem(random_graph(rng, 20))
    sel = NodeSelector.from_subset(range(8), 20)
    basis = slepians_energy(eig, BandSelector(7), sel)
    UK = eig.eigenvectors[:, :7]
    for _ in range(200):
        v = rng.normal(size=7)
        v /= np.linalg.norm(v)
        assert subset_energy(UK @ v, sel) <= basis.values[0] + 1e-9


def test_power_iteration_oracle():
    rng = np.random.default_rng(21)
    checked = 0
    while checked < 20:
        n = int(rng.integers(5, 20))
        eig = laplacian_eigensystem(random_graph(rng, n))
        K = int(rng.integers(2, n + 1))
        sel = NodeSelector.from_subset(rng.choice(n, size=int(rng.integers(1, n)), replace=False), n)
        C = concentration_matrix(eig, BandSelector(K), sel)
        w = np.linalg.eigvalsh(C)
        # the oracle only converges with a clear gap at the top
        if w[-1] <= 0 or w[-2] / w[-1] >= 0.99:
            continue
        v = np.ones(K) / np.sqrt(K) + 1e-3 * rng.normal(size=K)
        for _ in range(5000):
            v = C @ v
            v /= np.linalg.norm(v)
        top = slepians_energy(eig, BandSelector(K), sel).coefficients[:, 0]
        angle = np.arccos(min(1.0, abs(float(v @ top))))
        assert angle <= 1e-6
        checked += 1


def test_two_ring_embedded_smoother():
    g = two_ring_graph(20)
    eig = laplacian_eigensystem(g)
    L = build_laplacian(g)
    inner = NodeSelector.from_subset(range(20), 40)
    ze = slepians_energy(eig, BandSelector(12), inner).Z[:, 0]
    zm = slepians_embedded(eig, BandSelector(12), inner).Z[:, 0]
    assert zm @ L @ zm <= ze @ L @ ze + 1e-12
    # energy Slepians concentrate on the inner ring, Fourier modes do not
    assert subset_energy(ze, inner) > 0.9
    assert subset_energy(eig.eigenvectors[:, 1], inner) < 0.6


# -- spacelimited form --------------------------------------------------------

def test_spacelimited_path3(path3, first_two):
    basis = spacelimited_slepians(path3, BandSelector(2), first_two)
    top = basis.Z[:, 0]
    assert top[2] == 0.0
    np.testing.assert_allclose(top / np.linalg.norm(top), np.array([2, 1, 0]) / np.sqrt(5), atol=1e-10)
    np.testing.assert_allclose(np.sum(basis.Z**2, axis=0), basis.values, atol=1e-10)
    assert abs(np.sum(top**2) - 1.0) <= 1e-10


def test_spacelimited_full_is_energy():
    eig = laplacian_eigensystem(cycle_graph(9))
    full = NodeSelector(np.ones(9))
    np.testing.assert_array_equal(spacelimited_slepians(eig, BandSelector(4), full).Z,
                                  slepians_energy(eig, BandSelector(4), full).Z)


def test_spacelimited_single_node():
    eig = laplacian_eigensystem(path_graph(6))
    basis = spacelimited_slepians(eig, BandSelector(6), NodeSelector.from_subset([3], 6))
    top = basis.Z[:, 0]
    assert np.count_nonzero(top) == 1 and top[3] != 0


def test_spacelimited_rejects_soft():
    eig = laplacian_eigensystem(path_graph(3))
    with pytest.raises(ValueError):
        spacelimited_slepians(eig, BandSelector(2), NodeSelector([0.5, 1.0, 0.0]))


def test_spacelimited_norms_random():
    rng = np.random.default_rng(12)
    for _ in range(20):
        n = int(rng.integers(3, 20))
        eig = laplacian_eigensystem(random_graph(rng, n))
        sel = NodeSelector.from_subset(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False), n)
        basis = spacelimited_slepians(eig, BandSelector(int(rng.integers(1, n + 1))), sel)
        assert np.all(basis.Z[sel.weights == 0] == 0)
        np.testing.assert_allclose(np.sum(basis.Z**2, axis=0), basis.values, atol=1e-10)


def test_node_domain_operator_spectrum():
    rng = np.random.default_rng(13)
    for _ in range(50):
        n = int(rng.integers(2, 21))
        eig = laplacian_eigensystem(random_graph(rng, n))
        K = int(rng.integers(1, n + 1))
        sel = NodeSelector.from_subset(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False), n)
        SB, SV = selection_matrices(BandSelector(K), sel, n)
        U = eig.eigenvectors
        op = SV @ U @ SB @ SB.T @ U.T @ SV
        top = np.sort(np.linalg.eigvalsh(op))[::-1][:K]
        mu = np.sort(np.linalg.eigvalsh(concentration_matrix(eig, BandSelector(K), sel)))[::-1]
        np.testing.assert_allclose(top, mu, atol=1e-8)


# -- helpers and I/O ----------------------------------------------------------

def test_subset_energy():
    sel = NodeSelector.from_subset([0, 2], 4)
    x = np.array([1.0, 0, 2.0, 0])
    assert subset_energy(x, sel) == pytest.approx(np.sum(x**2))
    assert subset_energy(np.array([0, 1.0, 0, 0]), sel) == 0.0


def test_basis_csv_roundtrip(tmp_path, path3, first_two):
    basis = slepians_energy(path3, BandSelector(2), first_two)
    path = tmp_path / "b.csv"
    save_basis_csv(basis, path)
    assert path.read_text().splitlines()[0] == "k,mu,z0,z1,z2"
    values, Z = load_basis_csv(path)
    np.testing.assert_array_equal(values, basis.values)
    np.testing.assert_array_equal(Z, basis.Z)
