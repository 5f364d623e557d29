"""Symmetric eigensolver, polynomial graph filters and frequency responses."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import InvalidArgument, NumericError

DENSE_LIMIT = 2048


@dataclass(frozen=True, eq=False)
class FilterCoeffs:
    """Taps h_0 .. h_{K-1} of one polynomial / diffusion filter."""

    taps: np.ndarray

    def __post_init__(self):
        taps = np.array(self.taps, dtype=float).reshape(-1)
        if taps.size < 1:
            raise InvalidArgument("a filter needs at least one tap")
        if not np.all(np.isfinite(taps)):
            raise InvalidArgument("filter taps must be finite")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def tap_count(self) -> int:
        return self.taps.size


def as_taps(h) -> np.ndarray:
    if isinstance(h, FilterCoeffs):
        return h.taps
    taps = np.asarray(h, dtype=float).reshape(-1)
    if taps.size < 1:
        raise InvalidArgument("a filter needs at least one tap")
    return taps


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def source_dim(self) -> int:
        return self.eigenvectors.shape[0]

    @property
    def k(self) -> int:
        return self.eigenvalues.size


def _max_abs(A) -> float:
    if sparse.issparse(A):
        return float(abs(A).max()) if A.nnz else 0.0
    return float(np.max(np.abs(A))) if A.size else 0.0


def check_symmetric(L, rtol=1e-10):
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise InvalidArgument(f"expected a square matrix, got shape {L.shape}")
    scale = _max_abs(L)
    if _max_abs(L - L.T) > rtol * max(scale, np.finfo(float).tiny):
        raise InvalidArgument("matrix is not symmetric")


def fix_signs(V: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def _gershgorin_low(L) -> float:
    if sparse.issparse(L):
        L = L.tocsr()
        diag = L.diagonal()
        off = np.asarray(abs(L).sum(axis=1)).ravel() - np.abs(diag)
    else:
        diag = np.diag(L)
        off = np.abs(L).sum(axis=1) - np.abs(diag)
    return float(np.min(diag - off))


def eig_sym(L, k: int, *, dense_limit: int = DENSE_LIMIT, tol: float = 1e-8,
            maxiter: int | None = None) -> SpectralDecomposition:
    """The ``k`` smallest eigenpairs of a symmetric matrix, ascending.

    Matrices up to ``dense_limit`` go through LAPACK; larger ones through
    shift-invert Lanczos (ARPACK) anchored just below the Gershgorin bound.
    """
    n = L.shape[0]
    check_symmetric(L)
    if not 1 <= k <= n:
        raise InvalidArgument(f"k must lie in [1, {n}], got {k}")
    if n <= dense_limit or k >= n - 1:
        A = L.toarray() if sparse.issparse(L) else np.asarray(L, dtype=float)
        w, V = scipy.linalg.eigh(A, subset_by_index=[0, k - 1])
    else:
        maxiter = maxiter or 10 * n
        scale = max(_max_abs(L), 1e-300)
        sigma = min(_gershgorin_low(L), 0.0) - 1e-6 * scale
        A = L.tocsc() if sparse.issparse(L) else np.asarray(L, dtype=float)
        v0 = np.ones(n) / math.sqrt(n) + 1e-3 * np.cos(np.arange(n))
        try:
            w, V = splinalg.eigsh(A, k=k, sigma=sigma, which="LM", tol=tol, maxiter=maxiter, v0=v0)
        except splinalg.ArpackNoConvergence as exc:
            raise NumericError(
                f"Lanczos did not converge: {len(exc.eigenvalues)} of {k} pairs after {maxiter} iterations",
                {"converged": len(exc.eigenvalues), "requested": k, "maxiter": maxiter},
            ) from exc
        order = np.argsort(w)
        w, V = w[order], V[:, order]
    V = fix_signs(V)
    resid = np.linalg.norm(L @ V - V * w, axis=0)
    bad = resid > 1e-7 * np.maximum(1.0, np.abs(w))
    if np.any(bad):
        raise NumericError("eigenpair residuals above tolerance",
                           {"residuals": resid.tolist(), "eigenvalues": w.tolist()})
    return SpectralDecomposition(w, V)


def largest_eigenvalue(L) -> float:
    check_symmetric(L)
    n = L.shape[0]
    if n <= DENSE_LIMIT:
        A = L.toarray() if sparse.issparse(L) else np.asarray(L, dtype=float)
        return float(scipy.linalg.eigh(A, eigvals_only=True, subset_by_index=[n - 1, n - 1])[0])
    return float(splinalg.eigsh(L, k=1, which="LA", return_eigenvectors=False, tol=1e-10)[0])


def poly_filter_apply(h, L, x):
    """``sum_k h_k L^k x`` by repeated products with ``L``; ``x`` may have columns."""
    taps = as_taps(h)
    x = np.asarray(x, dtype=float)
    if x.shape[0] != L.shape[0]:
        raise InvalidArgument(f"signal has {x.shape[0]} rows, operator has {L.shape[0]}")
    out = taps[0] * x
    z = x
    for hk in taps[1:]:
        z = L @ z
        out = out + hk * z
    return out


def graph_freq_response(h, lam):
    """``sum_k h_k lam^k`` by Horner's rule."""
    taps = as_taps(h)
    lam = np.asarray(lam, dtype=float)
    out = np.full(lam.shape, taps[-1])
    for hk in taps[-2::-1]:
        out = out * lam + hk
    return float(out) if out.ndim == 0 else out


def graph_freq_derivative(h, lam):
    taps = as_taps(h)
    if taps.size == 1:
        return graph_freq_response([0.0], lam)
    return graph_freq_response(taps[1:] * np.arange(1, taps.size), lam)


def manifold_freq_response(h, lam):
    """``sum_k h_k exp(-k lam)``, the response of the diffusion filter."""
    taps = as_taps(h)
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise InvalidArgument("manifold eigenvalues are nonnegative")
    # polynomial in exp(-lam)
    out = graph_freq_response(taps, np.exp(-lam))
    return out


def continuity_constant(h, lam_max) -> float:
    """``R(h) = sum_k k |h_k| lam_max^(k-1)``; bounds |h'(lam)| on [0, lam_max]."""
    taps = as_taps(h)
    if lam_max <= 0:
        raise InvalidArgument("lam_max must be > 0")
    k = np.arange(taps.size)
    return float(np.sum(k[1:] * np.abs(taps[1:]) * lam_max ** (k[1:] - 1.0)))


def lowpass_diagnostic(h, d: int, grid):
    """Suprema of ``|h(lam)| lam^d`` and ``|h'(lam)| lam^(d+1)`` over ``grid``.

    The second value is an empirical estimate of the continuity constant C_L.
    """
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise InvalidArgument("grid is empty")
    if np.any(grid <= 0):
        raise InvalidArgument("grid values must be > 0")
    resp = np.abs(graph_freq_response(h, grid)) * grid ** d
    deriv = np.abs(graph_freq_derivative(h, grid)) * grid ** (d + 1)
    return float(np.max(resp)), float(np.max(deriv))


def spectral_response(h, lam, response="polynomial"):
    if response == "polynomial":
        return graph_freq_response(h, lam)
    if response == "exponential":
        # roundoff can leave the zero eigenvalue of a Laplacian slightly negative
        return manifold_freq_response(h, np.maximum(lam, 0.0))
    raise InvalidArgument(f"unknown response family {response!r}")


def spectral_filter_apply(h, decomp: SpectralDecomposition, x, response="polynomial"):
    """``V h(Lambda) V^T x`` for either response family."""
    V = decomp.eigenvectors
    coeffs = V.T @ x
    scale = spectral_response(h, decomp.eigenvalues, response)
    return V @ (scale.reshape(-1, *([1] * (coeffs.ndim - 1))) * coeffs)


def write_spectrum_csv(decomp: SpectralDecomposition, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("index,eigenvalue\n")
        for i, lam in enumerate(decomp.eigenvalues, start=1):
            fh.write(f"{i},{lam:.17g}\n")
