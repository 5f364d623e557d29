"""Manifold models, point sampling and closed-form spectra.

Two analytic families are supported, circles and flat tori (a product of two
circles embedded in R^4), plus triangle-mesh point clouds which only support
sampling. For analytic kinds with uniform density the weighted Laplace
operator ``L_rho f = -(1 / 2 rho) div(rho^2 grad f)`` reduces to
``(rho / 2) * (-Laplace-Beltrami)``, which is diagonalised by Fourier modes.

Eigenfunctions are normalised in L^2(mu), with mu the probability measure of
the density, so the constant mode is exactly 1 and harmonics carry a sqrt(2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import i0e

from .errors import InvalidArgument, InvalidSpec, Unsupported

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Uniform:
    pass


@dataclass(frozen=True)
class VonMises:
    location: float = 0.0
    concentration: float = 0.0

    def __post_init__(self):
        if not (self.concentration >= 0.0 and math.isfinite(self.concentration)):
            raise InvalidSpec("von Mises concentration must be finite and >= 0")


UNIFORM = Uniform()


@dataclass(frozen=True)
class ManifoldSpec:
    """A manifold together with the sampling density on it.

    ``kind`` is one of ``"circle"``, ``"torus"`` or ``"mesh"``. Circles carry
    ``radii=(r,)``, tori ``radii=(r1, r2)``; meshes carry a ``TriangleMesh``.
    """

    kind: str
    radii: tuple = (1.0,)
    density: Uniform | VonMises = UNIFORM
    mesh: object = field(default=None, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))
        if self.kind not in ("circle", "torus", "mesh"):
            raise InvalidSpec(f"unknown manifold kind {self.kind!r}")
        if self.kind == "circle" and len(self.radii) != 1:
            raise InvalidSpec("a circle takes exactly one radius")
        if self.kind == "torus" and len(self.radii) != 2:
            raise InvalidSpec("a flat torus takes two radii")
        if self.kind != "mesh" and not all(r > 0 and math.isfinite(r) for r in self.radii):
            raise InvalidSpec("radii must be positive and finite")
        if self.kind == "mesh" and self.mesh is None:
            raise InvalidSpec("mesh manifolds need a mesh")
        if isinstance(self.density, VonMises) and self.kind != "circle":
            raise InvalidSpec("von Mises density is only defined on the circle")

    @classmethod
    def circle(cls, radius=1.0, density=UNIFORM):
        return cls("circle", (float(radius),), density)

    @classmethod
    def torus(cls, r1=1.0, r2=1.0):
        return cls("torus", (float(r1), float(r2)))

    @classmethod
    def mesh_cloud(cls, mesh):
        return cls("mesh", (), UNIFORM, mesh)

    @property
    def intrinsic_dim(self) -> int:
        return 1 if self.kind == "circle" else 2

    @property
    def ambient_dim(self) -> int:
        return {"circle": 2, "torus": 4, "mesh": 3}[self.kind]

    @property
    def is_analytic(self) -> bool:
        return self.kind in ("circle", "torus")

    @property
    def volume(self) -> float:
        if self.kind == "circle":
            return TWO_PI * self.radii[0]
        if self.kind == "torus":
            return TWO_PI * self.radii[0] * TWO_PI * self.radii[1]
        return float(self.mesh.area)


@dataclass(frozen=True, eq=False)
class PointSet:
    points: np.ndarray
    spec: ManifoldSpec
    seed: int | None = None
    params: np.ndarray | None = None

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise InvalidArgument("a point set needs at least one point")

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    points: PointSet
    weights: np.ndarray

    def integrate(self, values):
        return np.tensordot(self.weights, values, axes=(0, 0))


def density(spec: ManifoldSpec, params) -> np.ndarray:
    """Density of mu w.r.t. the Riemannian volume, at intrinsic coordinates."""
    params = np.asarray(params, dtype=float)
    if spec.kind == "mesh":
        return np.full(params.shape[0], 1.0 / spec.volume)
    if isinstance(spec.density, VonMises):
        kappa, loc = spec.density.concentration, spec.density.location
        theta = params.reshape(-1)
        # i0e keeps large concentrations finite
        return np.exp(kappa * (np.cos(theta - loc) - 1.0)) / (TWO_PI * i0e(kappa) * spec.radii[0])
    return np.full(params.shape[0], 1.0 / spec.volume)


def embed(spec: ManifoldSpec, params) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    if spec.kind == "circle":
        theta = params.reshape(-1)
        r = spec.radii[0]
        return np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    if spec.kind == "torus":
        r1, r2 = spec.radii
        a, b = params[:, 0], params[:, 1]
        return np.column_stack([r1 * np.cos(a), r1 * np.sin(a), r2 * np.cos(b), r2 * np.sin(b)])
    raise Unsupported("mesh clouds have no intrinsic parametrisation")


def intrinsic_coords(spec: ManifoldSpec, points) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if spec.kind == "circle":
        return np.mod(np.arctan2(points[:, 1], points[:, 0]), TWO_PI)[:, None]
    if spec.kind == "torus":
        a = np.mod(np.arctan2(points[:, 1], points[:, 0]), TWO_PI)
        b = np.mod(np.arctan2(points[:, 3], points[:, 2]), TWO_PI)
        return np.column_stack([a, b])
    raise Unsupported("mesh clouds have no intrinsic parametrisation")


def manifold_residual(spec: ManifoldSpec, points) -> np.ndarray:
    """Violation of the implicit equation at each point (0 on the manifold)."""
    points = np.asarray(points, dtype=float)
    if spec.kind == "circle":
        return np.abs(np.hypot(points[:, 0], points[:, 1]) - spec.radii[0])
    if spec.kind == "torus":
        r1, r2 = spec.radii
        return np.maximum(np.abs(np.hypot(points[:, 0], points[:, 1]) - r1),
                          np.abs(np.hypot(points[:, 2], points[:, 3]) - r2))
    raise Unsupported("no implicit equation for mesh clouds")


def sample_points(spec: ManifoldSpec, n: int, seed: int) -> PointSet:
    """Draw ``n`` i.i.d. points from the density of ``spec``."""
    if int(n) != n or n < 1:
        raise InvalidArgument(f"n must be a positive integer, got {n!r}")
    n = int(n)
    if spec.kind == "mesh":
        from .mesh import sample_mesh_points

        return sample_mesh_points(spec.mesh, n, seed, spec=spec)
    rng = np.random.default_rng(seed)
    if spec.kind == "circle":
        if isinstance(spec.density, VonMises):
            d = spec.density
            theta = np.mod(rng.vonmises(d.location, d.concentration, size=n), TWO_PI)
        else:
            theta = rng.uniform(0.0, TWO_PI, size=n)
        params = theta[:, None]
    else:
        params = rng.uniform(0.0, TWO_PI, size=(n, 2))
    return PointSet(embed(spec, params), spec, seed, params)


@dataclass(frozen=True)
class AnalyticEigenpair:
    """One eigenpair of L_rho; ``modes`` holds (frequency, 'c'|'s'|'1') per circle factor."""

    index: int
    eigenvalue: float
    modes: tuple
    radii: tuple

    def at_params(self, params) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        if params.ndim < 2:
            params = params.reshape(-1, len(self.modes))
        out = np.ones(params.shape[0])
        for axis, (k, kind) in enumerate(self.modes):
            if kind == "c":
                out = out * (math.sqrt(2.0) * np.cos(k * params[:, axis]))
            elif kind == "s":
                out = out * (math.sqrt(2.0) * np.sin(k * params[:, axis]))
        return out

    def __call__(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        spec = ManifoldSpec("circle" if len(self.modes) == 1 else "torus", self.radii)
        return self.at_params(intrinsic_coords(spec, points))


def _circle_basis(k):
    return [(0, "1")] if k == 0 else [(k, "c"), (k, "s")]


def analytic_spectrum(spec: ManifoldSpec, k_max: int) -> list[AnalyticEigenpair]:
    """First ``k_max`` eigenpairs of L_rho, ascending.

    Degenerate pairs are ordered cos before sin; on the torus ties are broken
    by (k1, k2) and then by the factor ordering (cc, cs, sc, ss).
    """
    if k_max < 1:
        raise InvalidArgument("k_max must be >= 1")
    if not spec.is_analytic:
        raise Unsupported("no closed-form spectrum for mesh clouds")
    if not isinstance(spec.density, Uniform):
        raise Unsupported("closed-form spectra need a uniform density")
    rho = 1.0 / spec.volume
    if spec.kind == "circle":
        r = spec.radii[0]
        out = []
        k = 0
        while len(out) < k_max:
            for mode in _circle_basis(k):
                out.append((0.5 * rho * (k / r) ** 2, (mode,)))
            k += 1
    else:
        r1, r2 = spec.radii
        lam = lambda k1, k2: 0.5 * rho * ((k1 / r1) ** 2 + (k2 / r2) ** 2)
        kmax = int(math.isqrt(k_max)) + 1
        while True:
            cand = []
            for k1 in range(kmax + 1):
                for k2 in range(kmax + 1):
                    for t, (m1, m2) in enumerate((a, b) for a in _circle_basis(k1) for b in _circle_basis(k2)):
                        cand.append((lam(k1, k2), k1, k2, t, (m1, m2)))
            cand.sort(key=lambda c: c[:4])
            # every omitted mode has k1 or k2 > kmax, so its eigenvalue is at least this
            bound = min(lam(kmax + 1, 0), lam(0, kmax + 1))
            if len(cand) >= k_max and cand[k_max - 1][0] < bound:
                break
            kmax *= 2
        out = [(c[0], c[4]) for c in cand]
    return [AnalyticEigenpair(i + 1, float(lam_i), modes, tuple(spec.radii))
            for i, (lam_i, modes) in enumerate(out[:k_max])]


@dataclass(frozen=True)
class BandlimitedSignal:
    """Manifold signal given by its first ``bandlimit_index`` spectral coefficients."""

    coeffs: tuple
    spec: ManifoldSpec

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if len(self.coeffs) < 1:
            raise InvalidArgument("a bandlimited signal needs at least one coefficient")

    @property
    def bandlimit_index(self) -> int:
        return len(self.coeffs)

    def normalized(self) -> "BandlimitedSignal":
        norm = math.sqrt(sum(c * c for c in self.coeffs))
        if norm == 0.0:
            return self
        return BandlimitedSignal(tuple(c / norm for c in self.coeffs), self.spec)

    def evaluate(self, params, spectrum: Sequence[AnalyticEigenpair] | None = None) -> np.ndarray:
        spectrum = spectrum or analytic_spectrum(self.spec, self.bandlimit_index)
        params = np.asarray(params, dtype=float)
        if params.ndim < 2:
            params = params.reshape(-1, self.spec.intrinsic_dim)
        out = np.zeros(params.shape[0])
        for c, pair in zip(self.coeffs, spectrum):
            if c != 0.0:
                out += c * pair.at_params(params)
        return out


def synthesize_signal(sig: BandlimitedSignal, pts: PointSet) -> np.ndarray:
    """Sample ``sig`` at the points: ``x_i = sum_j c_j phi_j(x_i)``."""
    if pts.spec != sig.spec:
        raise InvalidArgument("signal and point set live on different manifolds")
    params = pts.params if pts.params is not None else intrinsic_coords(pts.spec, pts.points)
    return sig.evaluate(params)


def quadrature_grid(spec: ManifoldSpec, q: int) -> QuadratureGrid:
    """Deterministic nodes/weights with sum(w) = 1 for integrals against mu.

    Circle: ``q`` equispaced angles starting at 0. Torus: an m x m tensor grid
    with ``m = ceil(sqrt(q))``, so at least ``q`` nodes. Non-uniform circle
    densities are folded into the weights (periodic trapezoid rule).
    """
    if q < 1:
        raise InvalidArgument("q must be >= 1")
    if not spec.is_analytic:
        raise Unsupported("no quadrature rule for mesh clouds")
    if spec.kind == "circle":
        params = (TWO_PI * np.arange(q) / q)[:, None]
        if isinstance(spec.density, VonMises):
            w = density(spec, params)
            w = w / w.sum()
        else:
            w = np.full(q, 1.0 / q)
    else:
        m = math.isqrt(q - 1) + 1
        t = TWO_PI * np.arange(m) / m
        a, b = np.meshgrid(t, t, indexing="ij")
        params = np.column_stack([a.ravel(), b.ravel()])
        w = np.full(m * m, 1.0 / (m * m))
    return QuadratureGrid(PointSet(embed(spec, params), spec, None, params), w)


def eigenfunction_matrix(spectrum: Sequence[AnalyticEigenpair], params) -> np.ndarray:
    """Values of each eigenfunction (columns) at each node (rows)."""
    return np.column_stack([pair.at_params(params) for pair in spectrum])
