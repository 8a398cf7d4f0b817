import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import gap_fixtures, random_graph, rel_err
from slepgraph.graph import cycle_graph, path_graph
from slepgraph.layers import (
    IDENTITY,
    RELU,
    DegenerateSpectrumError,
    SlepConvLayer,
    baseline_gcn_layer,
    eig_sym_with_grad,
    gcn_propagation,
    perturbation_vector,
    slepian_filter,
    slepnet_layer,
    slepnet_layer_backward,
    slepnet_layer_forward,
    time_embedding,
)


def _sym(rng, k):
    A = rng.normal(size=(k, k))
    return 0.5 * (A + A.T)


def _eig_loss(C, wl, wv, scale=0.0):
    # squares make the loss blind to each eigenvector's sign convention
    lam, V, _ = eig_sym_with_grad(C, scale)
    return float(wl @ lam + np.sum(wv * V * V))


def _fd_sym(f, C, h=1e-6):
    G = np.zeros_like(C)
    k = C.shape[0]
    for i in range(k):
        for j in range(i, k):
            E = np.zeros_like(C)
            E[i, j] = E[j, i] = h
            d = (f(C + E) - f(C - E)) / (2 * h)
            # symmetric perturbation touches two entries off the diagonal
            G[i, j] = G[j, i] = d if i == j else d / 2
    return G


def test_eig_sym_with_grad_matches_eigh():
    rng = np.random.default_rng(0)
    C = _sym(rng, 6)
    lam, V, _ = eig_sym_with_grad(C)
    np.testing.assert_allclose(lam, np.linalg.eigvalsh(C), atol=1e-12)
    np.testing.assert_allclose(V @ np.diag(lam) @ V.T, C, atol=1e-12)
    first = V[np.argmax(np.abs(V) > 1e-12, axis=0), np.arange(6)]
    assert np.all(first > 0)


def test_eig_sym_with_grad_fd_eight_node_fixtures():
    rng = np.random.default_rng(1)
    for _, _, C in gap_fixtures(20):
        k = C.shape[0]
        wl, wv = rng.normal(size=k), rng.normal(size=(k, k))
        _, V, back = eig_sym_with_grad(C)
        analytic = back(wl, 2.0 * wv * V)
        numeric = _fd_sym(lambda A: _eig_loss(A, wl, wv), C)
        assert rel_err(analytic, numeric) <= 1e-3


def test_eig_backward_symmetric_and_none():
    rng = np.random.default_rng(2)
    _, _, back = eig_sym_with_grad(_sym(rng, 5))
    dC = back(rng.normal(size=5), rng.normal(size=(5, 5)))
    np.testing.assert_allclose(dC, dC.T, atol=1e-14)
    np.testing.assert_array_equal(back(None, None), np.zeros((5, 5)))


def test_eigenvalue_only_gradient_is_outer_product():
    rng = np.random.default_rng(3)
    lam, V, back = eig_sym_with_grad(_sym(rng, 4))
    np.testing.assert_allclose(back(np.eye(4)[0], None), np.outer(V[:, 0], V[:, 0]), atol=1e-12)


def test_degenerate_spectrum():
    with pytest.raises(DegenerateSpectrumError):
        eig_sym_with_grad(np.eye(3))
    # the fixed perturbation separates repeated eigenvalues
    lam, _, _ = eig_sym_with_grad(np.eye(3), perturb_scale=1e-6)
    assert np.min(np.diff(lam)) > 1e-8


def test_eig_input_validation():
    with pytest.raises(ValueError):
        eig_sym_with_grad(np.ones((2, 3)))
    with pytest.raises(ValueError):
        eig_sym_with_grad(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_perturbation_vector():
    rho = perturbation_vector(10)
    assert np.unique(rho).size == 10 and np.all((rho > 0) & (rho < 1))
    np.testing.assert_array_equal(rho, perturbation_vector(10))


def test_slepian_filter_examples():
    Z = np.eye(3)
    np.testing.assert_allclose(slepian_filter(Z, np.array([2.0, 0, 1]), np.ones(3)), [2, 0, 1])
    rng = np.random.default_rng(4)
    Q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    x = rng.normal(size=6)
    np.testing.assert_allclose(slepian_filter(Q, np.ones(6), x), x, atol=1e-12)
    with pytest.raises(ValueError):
        slepian_filter(Z, np.ones(2), np.ones(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_slepian_filter_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    Z = np.linalg.qr(rng.normal(size=(7, 4)))[0]
    th, x, y = rng.normal(size=4), rng.normal(size=7), rng.normal(size=7)
    np.testing.assert_allclose(slepian_filter(Z, th, a * x + b * y),
                               a * slepian_filter(Z, th, x) + b * slepian_filter(Z, th, y), atol=1e-10)


def test_slepnet_layer_matches_loop():
    rng = np.random.default_rng(5)
    N, p, q, K = 9, 3, 4, 5
    Z = np.linalg.qr(rng.normal(size=(N, K)))[0]
    layer = SlepConvLayer(rng.normal(size=(p, q, K)))
    H = rng.normal(size=(N, p))
    out = slepnet_layer(H, layer, Z)
    ref = np.zeros((N, q))
    for j in range(q):
        for i in range(p):
            ref[:, j] += slepian_filter(Z, layer.theta[i, j], H[:, i])
    np.testing.assert_allclose(out, np.maximum(ref, 0), atol=1e-12)
    with pytest.raises(ValueError):
        slepnet_layer(H[:, :2], layer, Z)


def test_slepnet_layer_gradients():
    rng = np.random.default_rng(6)
    B, N, p, q, K = 2, 7, 3, 2, 4
    Z = rng.normal(size=(N, K))
    theta = rng.normal(size=(p, q, K))
    H = rng.normal(size=(B, N, p))
    W = rng.normal(size=(B, N, q))

    def loss(H_, th_, Z_):
        out, _ = slepnet_layer_forward(H_, th_, Z_, IDENTITY)
        return float(np.sum(W * out))

    _, cache = slepnet_layer_forward(H, theta, Z, IDENTITY)
    dH, dth, dZ = slepnet_layer_backward(W, theta, Z, cache, IDENTITY)
    h = 1e-6
    for arr, grad, which in ((H, dH, 0), (theta, dth, 1), (Z, dZ, 2)):
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            args = [H, theta, Z]
            plus, minus = arr.copy(), arr.copy()
            plus[idx] += h
            minus[idx] -= h
            args[which] = plus
            fp = loss(*args)
            args[which] = minus
            num[idx] = (fp - loss(*args)) / (2 * h)
        assert rel_err(grad, num) <= 1e-6


def test_time_embedding(oracle):
    np.testing.assert_allclose(time_embedding(1, 4), oracle["pe_d4_t1"], atol=1e-15)
    np.testing.assert_allclose(time_embedding(0, 6), [0, 1, 0, 1, 0, 1])
    with pytest.raises(ValueError):
        time_embedding(1, 3)


def test_gcn_layer(oracle):
    g = path_graph(3)
    out = baseline_gcn_layer(np.eye(3)[:, :1], np.eye(1), g, IDENTITY)
    np.testing.assert_allclose(out[:, 0], oracle["path3_gcn_e1"], atol=1e-12)
    P = gcn_propagation(cycle_graph(6))
    # on a regular graph every row of the propagation matrix sums to one
    np.testing.assert_allclose(P.sum(axis=1), np.ones(6), atol=1e-12)
    with pytest.raises(ValueError):
        baseline_gcn_layer(np.ones((4, 1)), np.eye(1), g)


def test_gcn_permutation_equivariant():
    rng = np.random.default_rng(7)
    g = random_graph(rng, 8)
    H, W = rng.normal(size=(8, 3)), rng.normal(size=(3, 2))
    perm = rng.permutation(8)
    out = baseline_gcn_layer(H, W, g, RELU)
    Ap = g.adjacency[np.ix_(perm, perm)]
    out_p = baseline_gcn_layer(H[perm], W, type(g)(Ap), RELU)
    np.testing.assert_allclose(out_p, out[perm], atol=1e-12)
