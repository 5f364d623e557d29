"""Graph and manifold neural networks built from banks of spectral filters.

Layer l maps F_{l-1} features to F_l features with one K-tap filter per
(output p, input q) pair, followed by a pointwise nonlinearity. On graphs the
filters are polynomials in the Laplacian; on manifolds they are sums of heat
diffusions ``exp(-k L_rho)`` applied in the eigenbasis.

Gradients are computed by hand-written reverse mode over the layer recursion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse.linalg import expm_multiply

from .errors import InvalidArgument, NumericError
from .manifold import (BandlimitedSignal, ManifoldSpec, analytic_spectrum,
                       eigenfunction_matrix, quadrature_grid)
from .spectral import FilterCoeffs, SpectralDecomposition, continuity_constant, spectral_response


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(x):
    return (x > 0).astype(float)


def _tanh_grad(x):
    t = np.tanh(x)
    return 1.0 - t * t


ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "tanh": (np.tanh, _tanh_grad),
    "identity": (lambda x: x, lambda x: np.ones_like(x)),
}
LOSSES = ("abs", "ce")


@dataclass(frozen=True)
class Architecture:
    features: tuple
    taps: int
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(int(f) for f in self.features))
        if len(self.features) < 2 or min(self.features) < 1:
            raise InvalidArgument("need at least one layer and positive feature counts")
        if self.taps < 1:
            raise InvalidArgument("filters need at least one tap")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(f"unknown activation {self.activation!r}")

    @classmethod
    def uniform(cls, layers, width, taps, activation="tanh", in_features=1, out_features=1):
        feats = (in_features,) + (width,) * (layers - 1) + (out_features,)
        return cls(feats, taps, activation)

    @property
    def layers(self) -> int:
        return len(self.features) - 1

    def shapes(self):
        return [(self.features[l + 1], self.features[l], self.taps) for l in range(self.layers)]


@dataclass(eq=False)
class ParamSet:
    """All filter taps; ``filters[l][p, q]`` is the filter from feature q to p."""

    arch: Architecture
    filters: list

    def __post_init__(self):
        self.filters = [np.asarray(f, dtype=float) for f in self.filters]
        if [f.shape for f in self.filters] != self.arch.shapes():
            raise InvalidArgument("filter shapes do not match the architecture")

    def copy(self) -> "ParamSet":
        return ParamSet(self.arch, [f.copy() for f in self.filters])

    def filter(self, l, p, q) -> FilterCoeffs:
        return FilterCoeffs(self.filters[l][p, q])

    def flat(self) -> np.ndarray:
        return np.concatenate([f.ravel() for f in self.filters])

    def with_flat(self, vec) -> "ParamSet":
        out, i = [], 0
        for shape in self.arch.shapes():
            size = int(np.prod(shape))
            out.append(np.asarray(vec[i:i + size], dtype=float).reshape(shape))
            i += size
        return ParamSet(self.arch, out)

    def continuity(self, lam_max) -> float:
        """Sum of the continuity constants of every filter in the bank."""
        return sum(continuity_constant(h, lam_max) for f in self.filters for h in f.reshape(-1, f.shape[-1]))

    def rows(self):
        for l, f in enumerate(self.filters):
            for p, q, k in np.ndindex(*f.shape):
                yield l, p, q, k, float(f[p, q, k])


def init_params(arch: Architecture, seed) -> ParamSet:
    """Taps i.i.d. uniform on [-1/K, 1/K]."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / arch.taps
    return ParamSet(arch, [rng.uniform(-bound, bound, size=s) for s in arch.shapes()])


class PolynomialShift:
    """Shift stack ``L^k Z`` for k < K; ``L`` is symmetric so it is its own adjoint."""

    def __init__(self, L):
        self.L = L
        self.n = L.shape[0]

    def stack(self, Z, K):
        S = np.empty((K,) + Z.shape)
        S[0] = Z
        for k in range(1, K):
            S[k] = self.L @ S[k - 1]
        return S

    def adjoint(self, dS):
        acc = dS[-1]
        for k in range(dS.shape[0] - 2, -1, -1):
            acc = self.L @ acc + dS[k]
        return acc


class SpectralShift:
    """Shift stack ``V r_k(Lambda) V^T Z`` with r_k = lam^k or exp(-k lam)."""

    def __init__(self, decomp: SpectralDecomposition, response="exponential"):
        self.V = decomp.eigenvectors
        self.lam = decomp.eigenvalues
        self.response = response
        self.n = self.V.shape[0]

    def _basis(self, K):
        eye = np.eye(K)
        return np.stack([spectral_response(eye[k], self.lam, self.response) for k in range(K)])

    def stack(self, Z, K):
        R = self._basis(K)
        Zhat = self.V.T @ Z
        return np.einsum("nm,km...->kn...", self.V, R.reshape(R.shape + (1,) * (Z.ndim - 1)) * Zhat)

    def adjoint(self, dS):
        R = self._basis(dS.shape[0])
        dhat = np.einsum("nm,kn...->km...", self.V, dS)
        return self.V @ np.sum(R.reshape(R.shape + (1,) * (dS.ndim - 2)) * dhat, axis=0)


class HeatShift:
    """Shift stack ``exp(-k L) Z`` through Krylov matrix-exponential products."""

    def __init__(self, L):
        self.neg_L = -L
        self.n = L.shape[0]

    def stack(self, Z, K):
        S = np.empty((K,) + Z.shape)
        S[0] = Z
        for k in range(1, K):
            S[k] = expm_multiply(self.neg_L, S[k - 1])
        return S

    def adjoint(self, dS):
        acc = dS[-1]
        for k in range(dS.shape[0] - 2, -1, -1):
            acc = expm_multiply(self.neg_L, acc) + dS[k]
        return acc


def as_shift(op, response="polynomial"):
    """Wrap a Laplacian (or its eigendecomposition) as a filter shift stack."""
    if isinstance(op, (PolynomialShift, SpectralShift, HeatShift)):
        return op
    if isinstance(op, SpectralDecomposition):
        return SpectralShift(op, response)
    if response == "exponential":
        return HeatShift(op)
    if response != "polynomial":
        raise InvalidArgument(f"unknown response family {response!r}")
    return PolynomialShift(op)


def _as_features(X, n):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != n:
        raise InvalidArgument(f"signal has {X.shape[0]} rows, graph has {n} nodes")
    return X


def _forward(H: ParamSet, shift, X):
    act = ACTIVATIONS[H.arch.activation][0]
    X = _as_features(X, shift.n)
    if X.shape[1] != H.arch.features[0]:
        raise InvalidArgument(f"expected {H.arch.features[0]} input features, got {X.shape[1]}")
    caches = []
    Z = X
    for h in H.filters:
        S = shift.stack(Z, h.shape[-1])
        pre = np.einsum("knq,pqk->np", S, h)
        caches.append((S, pre))
        Z = act(pre)
    return Z, caches


def _backward(H: ParamSet, shift, caches, dout):
    dact = ACTIVATIONS[H.arch.activation][1]
    grads = [None] * len(H.filters)
    for l in range(len(H.filters) - 1, -1, -1):
        S, pre = caches[l]
        dpre = dout * dact(pre)
        grads[l] = np.einsum("np,knq->pqk", dpre, S)
        if l:
            dout = shift.adjoint(np.einsum("np,pqk->knq", dpre, H.filters[l]))
    return grads


def gnn_forward(H: ParamSet, L, X, response="polynomial"):
    """Final-layer features (N x F_L) of the GNN on the graph with Laplacian ``L``.

    ``L`` may also be a ``SpectralDecomposition``, in which case filters are
    applied spectrally with either response family.
    """
    return _forward(H, as_shift(L, response), X)[0]


def mnn_forward(H: ParamSet, spec: ManifoldSpec, inputs, grid=None, m_proj=None,
                eval_params=None, spectrum=None):
    """MNN output at the quadrature nodes (or at ``eval_params``), shape (n, F_L).

    Each layer filters spectral coefficients with ``sum_k h_k exp(-k lam_i)``,
    synthesises on the grid, applies the nonlinearity and projects back onto
    the first ``m_proj`` eigenfunctions. The last layer skips the projection.
    """
    signals = [inputs] if isinstance(inputs, BandlimitedSignal) else list(inputs)
    if len(signals) != H.arch.features[0]:
        raise InvalidArgument(f"expected {H.arch.features[0]} input signals, got {len(signals)}")
    if any(s.spec != spec for s in signals):
        raise InvalidArgument("input signals live on a different manifold")
    m_band = max(s.bandlimit_index for s in signals)
    m_proj = m_proj or 4 * m_band
    if m_proj < m_band:
        raise InvalidArgument("projection bandwidth is below the input bandlimit")
    if spectrum is None:
        spectrum = analytic_spectrum(spec, m_proj)
    if m_proj > len(spectrum):
        raise InvalidArgument(f"m_proj={m_proj} exceeds the {len(spectrum)} available eigenpairs")
    spectrum = list(spectrum)[:m_proj]
    if grid is None:
        grid = quadrature_grid(spec, 64 * m_proj)
    act = ACTIVATIONS[H.arch.activation][0]
    lam = np.array([p.eigenvalue for p in spectrum])
    phi = eigenfunction_matrix(spectrum, grid.points.params)
    proj = phi * grid.weights[:, None]
    C = np.zeros((len(signals), m_proj))
    for q, s in enumerate(signals):
        C[q, :s.bandlimit_index] = s.coeffs
    decay = np.exp(-np.outer(np.arange(H.arch.taps), lam))
    for l, h in enumerate(H.filters):
        pre_hat = np.einsum("pqk,km,qm->pm", h, decay, C)
        if l == len(H.filters) - 1:
            phi_out = phi if eval_params is None else eigenfunction_matrix(spectrum, eval_params)
            return act(phi_out @ pre_hat.T)
        C = proj.T @ act(phi @ pre_hat.T)
        C = C.T


def _check_loss(kind):
    if kind not in LOSSES:
        raise InvalidArgument(f"unknown loss {kind!r}")


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def loss_and_dpred(kind, pred, target):
    """Mean loss over rows and its gradient w.r.t. ``pred``.

    abs: mean |pred - target| (subgradient sign, sign(0) = 0).
    ce:  mean cross-entropy of softmax(pred rows) against integer labels.
    """
    _check_loss(kind)
    pred = np.asarray(pred, dtype=float)
    if kind == "abs":
        target = np.asarray(target, dtype=float)
        if target.shape != pred.shape:
            if target.size != pred.size:
                raise InvalidArgument(f"length mismatch: {pred.shape} vs {target.shape}")
            target = target.reshape(pred.shape)
        diff = pred - target
        return float(np.mean(np.abs(diff))), np.sign(diff) / max(diff.size, 1)
    logits = np.atleast_2d(pred)
    labels = np.asarray(target, dtype=int).reshape(-1)
    if labels.size != logits.shape[0]:
        raise InvalidArgument(f"length mismatch: {logits.shape[0]} rows vs {labels.size} labels")
    logp = _log_softmax(logits)
    rows = np.arange(labels.size)
    value = -float(np.mean(logp[rows, labels]))
    d = np.exp(logp)
    d[rows, labels] -= 1.0
    return value, (d / labels.size).reshape(pred.shape)


def loss_value(kind, pred, target) -> float:
    return loss_and_dpred(kind, pred, target)[0]


def pointwise_loss(kind, pred, target) -> np.ndarray:
    """Per-row losses, so that ``loss_value`` is their mean."""
    _check_loss(kind)
    pred = np.asarray(pred, dtype=float)
    if kind == "abs":
        target = np.asarray(target, dtype=float)
        if target.size != pred.size:
            raise InvalidArgument(f"length mismatch: {pred.shape} vs {target.shape}")
        diff = np.abs(pred - target.reshape(pred.shape))
        return diff.reshape(diff.shape[0], -1).mean(axis=1) if diff.ndim else diff.reshape(1)
    logits = np.atleast_2d(pred)
    labels = np.asarray(target, dtype=int).reshape(-1)
    if labels.size != logits.shape[0]:
        raise InvalidArgument(f"length mismatch: {logits.shape[0]} rows vs {labels.size} labels")
    return -_log_softmax(logits)[np.arange(labels.size), labels]


def accuracy(pred, labels) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    pred = np.atleast_2d(pred)
    return float(np.mean(np.argmax(pred, axis=1) == np.asarray(labels).reshape(-1)))


@dataclass(eq=False)
class Sample:
    """One training item: a graph operator, input features and targets.

    Node-level items carry per-node targets; graph-level items carry a label
    compared against the node-mean readout.
    """

    shift: object
    x: np.ndarray
    y: object

    def __post_init__(self):
        self.shift = as_shift(self.shift)
        self.x = _as_features(self.x, self.shift.n)


def regularizer_value(H: ParamSet, lam_max) -> float:
    return H.continuity(lam_max)


def loss_and_grad(H: ParamSet, batch: Sequence[Sample], loss="abs", reg_weight=0.0,
                  lam_max=None, readout=None):
    """Objective ``data + reg_weight * sum R(h)`` and its gradient.

    Node-level (``readout=None``) data loss is the mean of per-item risks;
    graph-level (``readout="mean"``) sums the loss of each item's readout.
    Returns ``(objective, data_loss, reg_term, grads)``.
    """
    _check_loss(loss)
    if readout not in (None, "mean"):
        raise InvalidArgument(f"unknown readout {readout!r}")
    grads = [np.zeros_like(f) for f in H.filters]
    data = 0.0
    weight = 1.0 / len(batch) if readout is None else 1.0
    for item in batch:
        out, caches = _forward(H, item.shift, item.x)
        if readout is None:
            value, dout = loss_and_dpred(loss, out, item.y)
        else:
            r = out.mean(axis=0)
            value, dr = loss_and_dpred(loss, r, item.y)
            dout = np.broadcast_to(dr.reshape(1, -1) / out.shape[0], out.shape)
        data += weight * value
        for g, gi in zip(grads, _backward(H, item.shift, caches, weight * dout)):
            g += gi
    reg = 0.0
    if reg_weight:
        if lam_max is None:
            raise InvalidArgument("the regulariser needs lam_max")
        k = np.arange(H.arch.taps)
        scale = k * float(lam_max) ** np.maximum(k - 1.0, 0.0)
        reg = reg_weight * H.continuity(lam_max)
        for g, f in zip(grads, H.filters):
            g += reg_weight * np.sign(f) * scale
    total = data + reg
    if not math.isfinite(total) or not all(np.all(np.isfinite(g)) for g in grads):
        raise NumericError("non-finite loss or gradient", {"data": data, "reg": reg})
    return total, data, reg, ParamSet(H.arch, grads)


def grad(H: ParamSet, batch, loss="abs", reg_weight=0.0, lam_max=None, readout=None) -> ParamSet:
    return loss_and_grad(H, batch, loss, reg_weight, lam_max, readout)[3]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 40
    batch_size: int = 10
    reg_weight: float = 0.0
    loss: str = "abs"
    seed: int = 0

    def __post_init__(self):
        if not self.lr >= 0:
            raise InvalidArgument("lr must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidArgument("Adam betas must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgument("epochs and batch_size must be >= 1")
        if self.reg_weight < 0:
            raise InvalidArgument("reg_weight must be >= 0")
        _check_loss(self.loss)


class Adam:
    def __init__(self, lr=0.005, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass(eq=False)
class TrainResult:
    params: ParamSet
    losses: list = field(default_factory=list)
    reg_terms: list = field(default_factory=list)


def train(model, items: Sequence[Sample], cfg: TrainConfig, lam_max=None, init_seed=0,
          readout=None) -> TrainResult:
    """Adam on the training items; ``model`` is an Architecture or a starting ParamSet.

    Items are reshuffled every epoch with ``cfg.seed`` and split into batches
    of ``cfg.batch_size``. The recorded loss is the epoch mean of batch data
    losses; the reg term is evaluated after the epoch.
    """
    H = init_params(model, init_seed) if isinstance(model, Architecture) else model.copy()
    items = list(items)
    if not items:
        raise InvalidArgument("no training items")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2)
    result = TrainResult(H)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(items))
        batch_losses = []
        for start in range(0, len(items), cfg.batch_size):
            batch = [items[i] for i in order[start:start + cfg.batch_size]]
            try:
                _, data, _, g = loss_and_grad(H, batch, cfg.loss, cfg.reg_weight, lam_max, readout)
            except NumericError as exc:
                exc.diagnostics["trace"] = list(result.losses)
                exc.diagnostics["epoch"] = epoch
                raise
            batch_losses.append(data)
            opt.step(H.filters, g.filters)
        if not all(np.all(np.isfinite(f)) for f in H.filters):
            raise NumericError(f"parameters diverged at epoch {epoch}",
                               {"trace": list(result.losses), "epoch": epoch})
        result.losses.append(float(np.mean(batch_losses)))
        reg = cfg.reg_weight * H.continuity(lam_max) if cfg.reg_weight else 0.0
        result.reg_terms.append(reg)
    return result


def write_params_csv(H: ParamSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("layer,p,q,k,value\n")
        for l, p, q, k, v in H.rows():
            fh.write(f"{l},{p},{q},{k},{v:.17g}\n")


def read_params_csv(arch: Architecture, path) -> ParamSet:
    H = ParamSet(arch, [np.zeros(s) for s in arch.shapes()])
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            l, p, q, k, v = line.strip().split(",")
            H.filters[int(l)][int(p), int(q), int(k)] = float(v)
    return H


def write_trace_csv(result: TrainResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss,reg_term\n")
        for e, (loss, reg) in enumerate(zip(result.losses, result.reg_terms)):
            fh.write(f"{e},{loss:.17g},{reg:.17g}\n")
