import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import sparse
from scipy.sparse import linalg as splinalg

from manigap import spectral

from manigap.errors import InvalidArgument, NumericError
from manigap.spectral import (FilterCoeffs, SpectralDecomposition, continuity_constant, eig_sym, fix_signs,
                              graph_freq_derivative, graph_freq_response, largest_eigenvalue,
                              lowpass_diagnostic, manifold_freq_response, poly_filter_apply,
                              spectral_filter_apply, spectral_response, write_spectrum_csv)


def jacobi_eigh(A, sweeps=50):
    """Cyclic Jacobi rotations; returns ascending eigenvalues and eigenvectors."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    for _ in range(sweeps):
        off = np.sqrt(np.sum(np.triu(A, 1) ** 2))
        if off < 1e-15 * np.linalg.norm(A):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) <= 1e-300 + 1e-18 * (abs(A[p, p]) + abs(A[q, q])):
                    continue
                theta = (A[q, q] - A[p, p]) / (2 * A[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q], J[q, p] = s, -s
                A = J.T @ A @ J
                V = V @ J
    w = np.diag(A)
    order = np.argsort(w)
    return w[order], V[:, order]


def path_laplacian(n):
    main = np.r_[1.0, np.full(n - 2, 2.0), 1.0]
    return sparse.diags([main, -np.ones(n - 1), -np.ones(n - 1)], [0, 1, -1]).tocsr()


@pytest.mark.parametrize("seed", range(5))
def test_dense_eigs_match_jacobi(seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((12, 12))
    A = B + B.T
    w_ref, V_ref = jacobi_eigh(A)
    dec = eig_sym(A, 12)
    assert_allclose(dec.eigenvalues, w_ref, atol=1e-10)
    assert_allclose(np.abs(dec.eigenvectors.T @ V_ref), np.eye(12), atol=1e-8)


def test_path_graph_closed_form_via_lanczos():
    n = 400
    L = path_laplacian(n)
    dec = eig_sym(L, 6, dense_limit=100)
    exact = 2 - 2 * np.cos(np.pi * np.arange(6) / n)
    assert_allclose(dec.eigenvalues, exact, atol=1e-10)
    resid = np.linalg.norm(L @ dec.eigenvectors - dec.eigenvectors * dec.eigenvalues, axis=0)
    assert np.all(resid < 1e-8)


def test_dense_and_lanczos_paths_agree():
    W = sparse.random(300, 300, density=0.05, random_state=4)
    W = W + W.T
    L = (sparse.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()
    a = eig_sym(L, 5)
    b = eig_sym(L, 5, dense_limit=10)
    assert_allclose(a.eigenvalues, b.eigenvalues, atol=1e-9)
    assert_allclose(np.abs(np.sum(a.eigenvectors * b.eigenvectors, axis=0)), 1, atol=1e-7)


def test_sign_convention():
    rng = np.random.default_rng(1)
    B = rng.standard_normal((8, 8))
    dec = eig_sym(B + B.T, 8)
    V = dec.eigenvectors
    idx = np.argmax(np.abs(V), axis=0)
    assert np.all(V[idx, np.arange(8)] > 0)
    assert np.array_equal(fix_signs(-V), V)


def test_eig_errors():
    with pytest.raises(InvalidArgument):
        eig_sym(np.array([[1.0, 2.0], [0.0, 1.0]]), 1)
    with pytest.raises(InvalidArgument):
        eig_sym(np.eye(3), 4)
    with pytest.raises(InvalidArgument):
        eig_sym(np.ones((2, 3)), 1)


def test_lanczos_non_convergence_reports_diagnostics(monkeypatch):
    # shift-invert converges too fast to starve it, so stand in for ARPACK giving up
    def stalled(*args, **kwargs):
        raise splinalg.ArpackNoConvergence("stalled", np.zeros(3), np.zeros((10, 3)))

    monkeypatch.setattr(spectral.splinalg, "eigsh", stalled)
    with pytest.raises(NumericError) as info:
        eig_sym(path_laplacian(10), 5, dense_limit=2, maxiter=7)
    assert info.value.diagnostics == {"converged": 3, "requested": 5, "maxiter": 7}


def test_residual_check_rejects_bad_pairs(monkeypatch):
    monkeypatch.setattr(spectral.splinalg, "eigsh", lambda *a, **k: (np.array([0.5]), np.ones((10, 1)) / np.sqrt(10)))
    with pytest.raises(NumericError):
        eig_sym(path_laplacian(10), 1, dense_limit=2)


def test_largest_eigenvalue():
    assert largest_eigenvalue(np.diag([1.0, 5.0, 2.0])) == pytest.approx(5.0)
    assert largest_eigenvalue(path_laplacian(3000)) == pytest.approx(2 - 2 * np.cos(np.pi * 2999 / 3000), rel=1e-9)


def test_filter_coeffs():
    h = FilterCoeffs([1, 2, 3])
    assert h.tap_count == 3
    with pytest.raises(ValueError):
        h.taps[0] = 5
    with pytest.raises(InvalidArgument):
        FilterCoeffs([])
    with pytest.raises(InvalidArgument):
        FilterCoeffs([np.nan])


def test_poly_filter_equals_spectral_filter():
    rng = np.random.default_rng(2)
    B = rng.random((20, 20))
    W = np.triu(B, 1) / 20
    W = W + W.T
    L = np.diag(W.sum(1)) - W
    dec = eig_sym(L, 20)
    h = rng.uniform(-1, 1, 5)
    X = rng.standard_normal((20, 3))
    assert_allclose(poly_filter_apply(h, L, X), spectral_filter_apply(h, dec, X), atol=1e-12)
    assert_allclose(poly_filter_apply([1.0], L, X), X)
    with pytest.raises(InvalidArgument):
        poly_filter_apply(h, L, np.ones(3))


def test_poly_filter_on_sparse_operator():
    L = path_laplacian(10)
    x = np.arange(10.0)
    assert_allclose(poly_filter_apply([0, 0, 1], L, x), L.toarray() @ L.toarray() @ x)


def test_frequency_responses():
    h = [1.0, -2.0, 0.5]
    lam = np.array([0.0, 0.3, 2.0])
    assert_allclose(graph_freq_response(h, lam), [sum(c * l ** k for k, c in enumerate(h)) for l in lam])
    assert graph_freq_response(h, 0.3) == pytest.approx(1 - 0.6 + 0.045)
    step = 1e-6
    fd = (graph_freq_response(h, lam + step) - graph_freq_response(h, lam - step)) / (2 * step)
    assert_allclose(graph_freq_derivative(h, lam), fd, atol=1e-8)
    assert_allclose(graph_freq_derivative([3.0], lam), 0)
    assert_allclose(manifold_freq_response(h, lam), [sum(c * math.exp(-k * l) for k, c in enumerate(h)) for l in lam])
    assert manifold_freq_response(h, 0.0) == pytest.approx(sum(h))
    with pytest.raises(InvalidArgument):
        manifold_freq_response(h, -0.1)
    with pytest.raises(InvalidArgument):
        spectral_response(h, lam, "cubic")
    # exponential branch tolerates roundoff-negative zero modes
    assert spectral_response(h, np.array([-1e-17]), "exponential")[0] == pytest.approx(sum(h))


def test_continuity_constant_hand_values():
    assert continuity_constant([1.0, 2.0], 2.0) == 2.0
    assert continuity_constant([5.0, 0.0, -1.0], 3.0) == 6.0
    assert continuity_constant([7.0], 1.0) == 0.0
    with pytest.raises(InvalidArgument):
        continuity_constant([1.0], 0.0)


def test_continuity_constant_bounds_response_slope():
    rng = np.random.default_rng(4)
    for _ in range(20):
        h = rng.uniform(-1, 1, 5)
        lam = np.linspace(0, 3.0, 301)
        assert np.max(np.abs(graph_freq_derivative(h, lam))) <= continuity_constant(h, 3.0) + 1e-12


def test_lowpass_diagnostic_brute_force():
    h = [1.0, -0.5, 0.05]
    grid = np.linspace(0.01, 4, 400)
    sup_r, sup_d = lowpass_diagnostic(h, 1, grid)
    assert sup_r == pytest.approx(max(abs(1 - 0.5 * l + 0.05 * l * l) * l for l in grid))
    assert sup_d == pytest.approx(max(abs(-0.5 + 0.1 * l) * l * l for l in grid))
    with pytest.raises(InvalidArgument):
        lowpass_diagnostic(h, 1, [0.0, 1.0])
    with pytest.raises(InvalidArgument):
        lowpass_diagnostic(h, 1, [])


def test_spectrum_csv(tmp_path):
    dec = SpectralDecomposition(np.array([0.0, 0.25]), np.eye(2))
    p = tmp_path / "s.csv"
    write_spectrum_csv(dec, p)
    assert p.read_text() == "index,eigenvalue\n1,0\n2,0.25\n"
