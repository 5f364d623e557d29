"""Kernel graphs on sampled points.

Both kernels carry the 1/N prefactor, so Laplacian eigenvalues stay O(1) as N
grows. Gaussian graphs are dense ndarrays; epsilon graphs are scipy CSR.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .errors import InvalidArgument
from .manifold import PointSet

KERNELS = ("gaussian", "epsilon")
_SPLIT = 134217729.0  # 2**27 + 1, Veltkamp splitting constant


def unit_ball_volume(d: int) -> float:
    """Volume of the unit ball in R^d, ``pi^(d/2) / Gamma(d/2 + 1)``.

    Evaluated through exact integer factorials so small d are correctly rounded.
    """
    if int(d) != d or d < 1:
        raise InvalidArgument("d must be a positive integer")
    d = int(d)
    m = d // 2
    if d % 2 == 0:
        return math.pi ** m / math.factorial(m)
    odd_fact = math.prod(range(1, d + 1, 2))
    return 2.0 ** (m + 1) * math.pi ** m / odd_fact


def _check_eps(epsilon):
    if not np.all(np.asarray(epsilon) > 0):
        raise InvalidArgument(f"epsilon must be > 0, got {epsilon!r}")


def _two_prod(a, b):
    p = a * b
    ca, cb = _SPLIT * a, _SPLIT * b
    ah = ca - (ca - a)
    bh = cb - (cb - b)
    al, bl = a - ah, b - bh
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _gauss_decay(sq_dist, epsilon):
    """exp(-s / 4 eps) with the quotient's rounding error folded back in."""
    four_eps = 4.0 * epsilon
    q = sq_dist / four_eps
    p, e = _two_prod(q, four_eps)
    rem = ((sq_dist - p) - e) / four_eps
    return np.exp(-q) * (1.0 - rem)


def gaussian_weight(sq_dist, epsilon, d, n):
    """Edge weight of the Gaussian kernel graph.

    ``(1/n) * exp(-s / 4 eps) / (eps^(d/2 + 1) * (4 pi)^(d/2))``
    """
    _check_eps(epsilon)
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    sq_dist = np.asarray(sq_dist, dtype=float)
    epsilon = np.asarray(epsilon, dtype=float)
    if d % 2 == 0:
        eps_pow = epsilon ** (d // 2 + 1)
        norm = (4.0 * math.pi) ** (d // 2)
    else:
        eps_pow = epsilon ** (d / 2 + 1)
        norm = (4.0 * math.pi) ** (d / 2)
    out = _gauss_decay(sq_dist, epsilon) / (n * eps_pow * norm)
    return float(out) if out.ndim == 0 else out


def epsilon_constant(epsilon, d, n):
    return (d + 2) / (n * epsilon ** (d / 2 + 1) * unit_ball_volume(d))


def epsilon_weight(sq_dist, epsilon, d, n):
    """Edge weight of the epsilon graph; the support ``s / eps in [0, 1]`` is closed."""
    _check_eps(epsilon)
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    sq_dist = np.asarray(sq_dist, dtype=float)
    out = np.where(sq_dist <= epsilon, epsilon_constant(epsilon, d, n), 0.0)
    return float(out) if out.ndim == 0 else out


def epsilon_schedule(n, d, delta, kind, c=1.0):
    """Sample-size dependent bandwidth.

    gaussian: ``(log(c / delta) / n)^(1/(d+4))``
    epsilon:  ``(log(c n / delta) / n)^(1/(d+4))``
    """
    if n < 2:
        raise InvalidArgument("the schedule needs n >= 2")
    if not 0.0 < delta < 1.0:
        raise InvalidArgument("delta must lie in (0, 1)")
    if c <= 0:
        raise InvalidArgument("c must be > 0")
    if kind not in KERNELS:
        raise InvalidArgument(f"unknown kernel kind {kind!r}")
    arg = c / delta if kind == "gaussian" else c * n / delta
    if arg <= 1.0:
        raise InvalidArgument(f"log argument {arg!r} <= 1, schedule undefined")
    return (math.log(arg) / n) ** (1.0 / (d + 4))


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    epsilon: float
    intrinsic_dim: int

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise InvalidArgument(f"unknown kernel kind {self.kind!r}")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise InvalidArgument("epsilon must be positive and finite")
        if self.intrinsic_dim < 1:
            raise InvalidArgument("intrinsic dimension must be >= 1")


@dataclass(frozen=True)
class KernelPlan:
    """How to pick a kernel for a graph of a given size.

    ``epsilon`` set means a fixed bandwidth; otherwise the bandwidth schedule
    with confidence ``delta`` and constant ``c`` is used.
    """

    kind: str = "gaussian"
    epsilon: float | None = None
    delta: float = 0.1
    c: float = 1.0

    def at(self, n: int, d: int) -> KernelSpec:
        if self.epsilon is not None:
            return KernelSpec(self.kind, float(self.epsilon), d)
        return KernelSpec(self.kind, epsilon_schedule(n, d, self.delta, self.kind, self.c), d)


@dataclass(frozen=True, eq=False)
class KernelGraph:
    points: PointSet
    W: object
    L: object
    kernel: KernelSpec

    @property
    def n(self) -> int:
        return self.points.n

    @property
    def is_sparse(self) -> bool:
        return sparse.issparse(self.W)

    def dense_laplacian(self) -> np.ndarray:
        return self.L.toarray() if self.is_sparse else np.asarray(self.L)

    def lambda_max(self) -> float:
        from .spectral import largest_eigenvalue

        return largest_eigenvalue(self.L)


def _gaussian_block(X, lo, hi, kernel, n, W):
    diff = X[lo:hi, None, :] - X[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    W[lo:hi] = gaussian_weight(sq, kernel.epsilon, kernel.intrinsic_dim, n)


def build_graph(pts: PointSet, kernel: KernelSpec, threads: int = 1, block: int = 256) -> KernelGraph:
    """Weight matrix and Laplacian ``L = diag(W 1) - W``; no self-loops."""
    X = np.asarray(pts.points, dtype=float)
    n = X.shape[0]
    if kernel.kind == "gaussian":
        W = np.empty((n, n))
        spans = [(lo, min(lo + block, n)) for lo in range(0, n, block)]
        if threads > 1 and len(spans) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(lambda s: _gaussian_block(X, s[0], s[1], kernel, n, W), spans))
        else:
            for lo, hi in spans:
                _gaussian_block(X, lo, hi, kernel, n, W)
        # mirror the upper triangle so W == W.T bitwise whatever exp kernel numpy picks
        W = np.triu(W, 1)
        W += W.T
        L = -W
        L[np.diag_indices(n)] = W.sum(axis=1)
        return KernelGraph(pts, W, L, kernel)

    eps = kernel.epsilon
    tree = cKDTree(X)
    # pad the radius slightly, then apply the exact closed-interval test
    pairs = tree.query_pairs(math.sqrt(eps) * (1.0 + 1e-9), output_type="ndarray")
    if len(pairs):
        diff = X[pairs[:, 0]] - X[pairs[:, 1]]
        keep = np.einsum("ij,ij->i", diff, diff) <= eps
        pairs = pairs[keep]
    w = epsilon_constant(eps, kernel.intrinsic_dim, n)
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]]) if len(pairs) else np.zeros(0, int)
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]]) if len(pairs) else np.zeros(0, int)
    W = sparse.coo_matrix((np.full(rows.size, w), (rows, cols)), shape=(n, n)).tocsr()
    W.sort_indices()
    deg = np.asarray(W.sum(axis=1)).ravel()
    L = (sparse.diags(deg) - W).tocsr()
    L.sort_indices()
    return KernelGraph(pts, W, L, kernel)


def write_edge_csv(graph: KernelGraph, path) -> None:
    """Upper-triangle edge list ``i,j,weight`` with 17 significant digits."""
    W = sparse.triu(sparse.csr_matrix(graph.W), k=1).tocoo()
    order = np.lexsort((W.col, W.row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("i,j,weight\n")
        for r, c, v in zip(W.row[order], W.col[order], W.data[order]):
            fh.write(f"{r},{c},{v:.17g}\n")


def write_laplacian_csv(graph: KernelGraph, path, max_n: int = 2048) -> None:
    if graph.n > max_n:
        raise InvalidArgument(f"dense Laplacian export is limited to N <= {max_n}")
    L = graph.dense_laplacian()
    with open(path, "w", encoding="utf-8") as fh:
        for row in L:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
