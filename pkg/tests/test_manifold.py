import math

import mpmath
import numpy as np
import pytest
import scipy.stats
from numpy.testing import assert_allclose

from manigap.errors import InvalidArgument, InvalidSpec, Unsupported
from manigap.manifold import (BandlimitedSignal, ManifoldSpec, VonMises, analytic_spectrum, density,
                              eigenfunction_matrix, embed, intrinsic_coords, manifold_residual,
                              quadrature_grid, sample_points, synthesize_signal)


def periodic_fd_eigs(r, m, count):
    """Smallest eigenvalues of the second-difference Laplacian on a circle of radius r."""
    h = 2 * math.pi * r / m
    k = np.arange(m)
    return np.sort(4 * np.sin(np.pi * k / m) ** 2 / h ** 2)[:count]


def test_unit_circle_first_eigenvalues():
    lam = [p.eigenvalue for p in analytic_spectrum(ManifoldSpec.circle(), 7)]
    c = 1 / (4 * math.pi)
    assert_allclose(lam, [0, c, c, 4 * c, 4 * c, 9 * c, 9 * c], rtol=1e-15)


@pytest.mark.parametrize("r", [0.5, 1.0, 2.5])
def test_circle_spectrum_matches_finite_differences(r):
    spec = ManifoldSpec.circle(r)
    rho = 1 / spec.volume
    fd = 0.5 * rho * periodic_fd_eigs(r, 4000, 9)
    lam = [p.eigenvalue for p in analytic_spectrum(spec, 9)]
    assert_allclose(lam, fd, rtol=1e-5, atol=1e-14)


def test_torus_spectrum_matches_kronecker_sum_of_finite_differences():
    r1, r2 = 1.0, 1.7
    spec = ManifoldSpec.torus(r1, r2)
    rho = 1 / spec.volume
    a, b = periodic_fd_eigs(r1, 3000, 30), periodic_fd_eigs(r2, 3000, 30)
    fd = np.sort(np.add.outer(a, b).ravel())[:25] * 0.5 * rho
    lam = [p.eigenvalue for p in analytic_spectrum(spec, 25)]
    assert_allclose(lam, fd, rtol=1e-5, atol=1e-14)


def test_torus_spectrum_is_sorted_with_documented_ties():
    spec = ManifoldSpec.torus(1.0, 1.0)
    pairs = analytic_spectrum(spec, 9)
    lam = [p.eigenvalue for p in pairs]
    assert lam == sorted(lam)
    # four degenerate modes at k1^2 + k2^2 = 1: (0,1) cos/sin first, then (1,0)
    assert [p.modes for p in pairs[1:5]] == [((0, "1"), (1, "c")), ((0, "1"), (1, "s")),
                                            ((1, "c"), (0, "1")), ((1, "s"), (0, "1"))]
    assert [p.index for p in pairs] == list(range(1, 10))


def test_circle_degenerate_pair_is_cos_then_sin():
    pairs = analytic_spectrum(ManifoldSpec.circle(), 5)
    assert [p.modes[0] for p in pairs] == [(0, "1"), (1, "c"), (1, "s"), (2, "c"), (2, "s")]


@pytest.mark.parametrize("spec", [ManifoldSpec.circle(1.3), ManifoldSpec.torus(0.8, 1.2)])
def test_eigenfunctions_solve_weighted_laplace_equation(spec):
    rng = np.random.default_rng(3)
    rho = 1 / spec.volume
    h = 1e-4
    for pair in analytic_spectrum(spec, 12):
        params = rng.uniform(0, 2 * math.pi, size=(5, spec.intrinsic_dim))
        lap = np.zeros(5)
        for axis, r in enumerate(spec.radii):
            e = np.zeros(spec.intrinsic_dim)
            e[axis] = h
            second = (pair.at_params(params + e) - 2 * pair.at_params(params) + pair.at_params(params - e)) / h ** 2
            lap += second / r ** 2
        assert_allclose(-0.5 * rho * lap, pair.eigenvalue * pair.at_params(params), atol=1e-6)


@pytest.mark.parametrize("spec", [ManifoldSpec.circle(2.0), ManifoldSpec.torus(1.0, 2.0)])
def test_eigenfunctions_are_orthonormal(spec):
    spectrum = analytic_spectrum(spec, 13)
    grid = quadrature_grid(spec, 4096)
    Phi = eigenfunction_matrix(spectrum, grid.points.params)
    gram = Phi.T @ (Phi * grid.weights[:, None])
    assert_allclose(gram, np.eye(13), atol=1e-12)


def test_eigenpair_call_on_ambient_points():
    spec = ManifoldSpec.circle(2.0)
    pair = analytic_spectrum(spec, 4)[3]
    theta = np.array([0.1, 1.0, 4.0])
    assert_allclose(pair(embed(spec, theta[:, None])), math.sqrt(2) * np.cos(2 * theta), atol=1e-14)


def test_analytic_spectrum_rejects_mesh_and_non_uniform():
    with pytest.raises(Unsupported):
        analytic_spectrum(ManifoldSpec.circle(1.0, VonMises(0.0, 2.0)), 3)
    with pytest.raises(InvalidArgument):
        analytic_spectrum(ManifoldSpec.circle(), 0)


def test_spec_validation():
    with pytest.raises(InvalidSpec):
        ManifoldSpec.circle(-1.0)
    with pytest.raises(InvalidSpec):
        ManifoldSpec("torus", (1.0,))
    with pytest.raises(InvalidSpec):
        ManifoldSpec("torus", (1.0, 2.0), VonMises(0.0, 1.0))
    with pytest.raises(InvalidSpec):
        ManifoldSpec("sphere", (1.0,))
    with pytest.raises(InvalidSpec):
        VonMises(0.0, -1.0)
    assert ManifoldSpec.torus(1, 2).volume == pytest.approx(4 * math.pi ** 2 * 2)


@pytest.mark.parametrize("spec", [ManifoldSpec.circle(0.7), ManifoldSpec.torus(1.0, 0.4),
                                  ManifoldSpec.circle(1.0, VonMises(1.0, 3.0))])
def test_samples_lie_on_manifold_and_round_trip_coordinates(spec):
    pts = sample_points(spec, 500, 11)
    assert pts.n == 500
    assert np.max(manifold_residual(spec, pts.points)) < 1e-12
    assert_allclose(intrinsic_coords(spec, pts.points), pts.params, atol=1e-12)


def test_sampling_is_deterministic_per_seed():
    spec = ManifoldSpec.torus()
    a, b, c = sample_points(spec, 50, 5), sample_points(spec, 50, 5), sample_points(spec, 50, 6)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)


def test_uniform_circle_samples_pass_ks():
    theta = sample_points(ManifoldSpec.circle(), 20_000, 0).params[:, 0]
    assert scipy.stats.kstest(theta, scipy.stats.uniform(0, 2 * math.pi).cdf).pvalue > 1e-3


def test_von_mises_density_integrates_to_one_and_matches_scipy():
    spec = ManifoldSpec.circle(1.5, VonMises(0.7, 4.0))
    total = mpmath.quad(lambda t: density(spec, np.array([[float(t)]]))[0] * 1.5, [0, 2 * mpmath.pi])
    assert abs(total - 1) < 1e-12
    theta = np.linspace(0, 2 * math.pi, 17)[:, None]
    ref = scipy.stats.vonmises(4.0, loc=0.7).pdf(theta[:, 0]) / 1.5
    assert_allclose(density(spec, theta), ref, rtol=1e-12)


def test_von_mises_samples_match_rejection_sampler():
    """Compare against an independent rejection sampler via a two-sample KS test."""
    loc, kappa = 2.0, 1.5
    spec = ManifoldSpec.circle(1.0, VonMises(loc, kappa))
    ours = sample_points(spec, 20_000, 1).params[:, 0]
    rng = np.random.default_rng(99)
    cand = rng.uniform(0, 2 * math.pi, 200_000)
    keep = rng.random(cand.size) < np.exp(kappa * (np.cos(cand - loc) - 1))
    ref = cand[keep][:20_000]
    assert scipy.stats.ks_2samp(ours, ref).pvalue > 1e-3


def test_bandlimited_signal_synthesis():
    spec = ManifoldSpec.circle()
    sig = BandlimitedSignal((0.5, 2.0, 0.0, 0.0, -1.0), spec)
    pts = sample_points(spec, 40, 2)
    t = pts.params[:, 0]
    expect = 0.5 + 2 * math.sqrt(2) * np.cos(t) - math.sqrt(2) * np.sin(2 * t)
    assert_allclose(synthesize_signal(sig, pts), expect, atol=1e-13)
    assert sig.bandlimit_index == 5
    assert_allclose(np.linalg.norm(sig.normalized().coeffs), 1.0)
    with pytest.raises(InvalidArgument):
        synthesize_signal(sig, sample_points(ManifoldSpec.circle(2.0), 3, 0))


def test_quadrature_is_exact_for_trigonometric_polynomials():
    spec = ManifoldSpec.circle(3.0)
    grid = quadrature_grid(spec, 64)
    t = grid.points.params[:, 0]
    assert grid.integrate(np.cos(5 * t) ** 2) == pytest.approx(0.5, abs=1e-15)
    assert grid.weights.sum() == pytest.approx(1.0, abs=1e-15)
    torus = quadrature_grid(ManifoldSpec.torus(), 50)
    assert torus.points.n == 64 and torus.points.n >= 50


def test_von_mises_quadrature_matches_density_mean():
    spec = ManifoldSpec.circle(1.0, VonMises(0.3, 2.0))
    grid = quadrature_grid(spec, 256)
    mean_cos = grid.integrate(np.cos(grid.points.params[:, 0] - 0.3))
    from scipy.special import i0, i1
    assert mean_cos == pytest.approx(i1(2.0) / i0(2.0), abs=1e-13)
