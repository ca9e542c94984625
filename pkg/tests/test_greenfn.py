import numpy as np
import pytest
from scipy.integrate import quad

from bbmkit import build_grid, green_kernel, heat_kernel, make_potential, radial_green_apply
from bbmkit.greenfn import green_matrix, shell_kernel


def test_heat_kernel_at_origin():
    assert heat_kernel(1.0, 0.0, 1) == pytest.approx((2 * np.pi) ** -0.5, rel=1e-14)
    assert heat_kernel(2.0, np.zeros(3), 3) == pytest.approx((4 * np.pi) ** -1.5, rel=1e-14)
    # (4 pi)^(-3/2) = 0.0224484...
    assert heat_kernel(2.0, 0.0, 3) == pytest.approx(0.0224484, abs=1e-7)


def test_heat_kernel_normalized():
    val, _ = quad(lambda x: heat_kernel(0.7, x, 1), -np.inf, np.inf, epsabs=1e-12)
    assert abs(val - 1.0) < 1e-8


def test_green_kernel_values():
    assert green_kernel(0.5, 1.0, 3) == pytest.approx(np.exp(-1) / (2 * np.pi), rel=1e-14)
    assert green_kernel(0.5, 1.0, 3) == pytest.approx(0.0585498, abs=1e-7)
    assert green_kernel(0.5, 0.0, 1) == pytest.approx(1.0)
    assert green_kernel(0.0, 2.0, 3) == pytest.approx(1 / (4 * np.pi), rel=1e-14)


def test_green_kernel_domain():
    with pytest.raises(ValueError):
        green_kernel(0.0, 1.0, 1)
    with pytest.raises(ValueError):
        green_kernel(-1.0, 1.0, 3)


def _phi(x):
    # smooth test function with support in [-1, 1]
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    m = np.abs(x) < 1
    out[m] = np.exp(-1.0 / (1.0 - x[m] ** 2))
    return out


def _phi_dd(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    m = np.abs(x) < 1
    y = x[m]
    q = 1.0 - y * y
    out[m] = np.exp(-1.0 / q) * (6 * y**4 - 2) / q**4
    return out


@pytest.mark.parametrize("x", [0.0, 0.4, 1.5])
def test_distributional_identity_dim1(x):
    lam = 0.5
    f = lambda y: green_kernel(lam, x - y, 1) * (lam * _phi(y) - 0.5 * _phi_dd(y))
    val = sum(quad(f, a, b, epsabs=1e-13, limit=200)[0] for a, b in ((-1, x), (x, 1)) if a < b) \
        if -1 < x < 1 else quad(f, -1, 1, epsabs=1e-13, limit=200)[0]
    assert val == pytest.approx(float(_phi(x)), abs=1e-9)


def test_distributional_identity_dim3():
    # radial test function phi(r) = bump(r); Laplacian = phi'' + 2 phi' / r
    lam = 0.5
    p = make_potential({"dim": 3, "shape": "bump", "radius": 1.0, "height": 1.0})
    grid = build_grid(p, 128)
    r = grid.nodes
    q = 1 - r * r
    phi = np.exp(1 - 1 / q)
    d1 = phi * (-2 * r / q**2)
    d2 = phi * ((2 * r / q**2) ** 2 - (2 / q**2 + 8 * r * r / q**3))
    src = lam * phi - 0.5 * (d2 + 2 * d1 / r)
    targets = np.array([0.1, 0.5, 0.9, 1.5])
    got = radial_green_apply(lam, src, grid, targets)
    np.testing.assert_allclose(got, p.radial(targets), atol=1e-7)


def test_zero_lambda_harmonic_flux():
    # G_0 = 1/(2 pi r): (1/2) Laplacian vanishes off 0 and the flux through any sphere is -1
    r = np.array([0.5, 1.0, 2.0, 7.0])   # length 3 would be read as one point
    h = 1e-4
    g = lambda s: green_kernel(0.0, s, 3)
    lap = (g(r + h) - 2 * g(r) + g(r - h)) / h**2 + 2 / r * (g(r + h) - g(r - h)) / (2 * h)
    np.testing.assert_allclose(lap, 0.0, atol=1e-4)
    flux = 0.5 * 4 * np.pi * r**2 * (g(r + h) - g(r - h)) / (2 * h)
    np.testing.assert_allclose(flux, -1.0, rtol=1e-7)


def _direct_3d(lam, f, r, n=400):
    # G f at |x| = r by a spherical-coordinate quadrature around x (singularity removed by r^2)
    kappa = np.sqrt(2 * lam)
    t, w = np.polynomial.legendre.leggauss(n)
    rho = 1.25 + r
    s = 0.5 * rho * (t + 1)
    ws = 0.5 * rho * w
    c, wc = t, w
    S, C = np.meshgrid(s, c, indexing="ij")
    W = np.outer(ws, wc)
    y = np.sqrt(r * r + S * S + 2 * r * S * C)
    # G(s) s^2 = s e^{-kappa s} / (2 pi), times 2 pi for the azimuth
    return float(np.sum(W * S * np.exp(-kappa * S) * f(y)))


@pytest.mark.parametrize("lam", [0.0, 0.3, 2.0])
def test_radial_apply_vs_3d_quadrature(lam):
    p = make_potential({"dim": 3, "shape": "bump", "radius": 1.0, "height": 1.0})
    grid = build_grid(p, 128)
    targets = np.array([0.05, 0.3, 0.77, 1.0, 2.4])
    got = radial_green_apply(lam, p.radial(grid.nodes), grid, targets)
    want = [_direct_3d(lam, p.radial, r) for r in targets]
    np.testing.assert_allclose(got, want, rtol=1e-6)


def test_zero_source(grid3):
    out = radial_green_apply(0.4, np.zeros(grid3.n_nodes), grid3, [0.1, 3.0])
    assert np.all(out == 0)


def test_large_lambda_bound(bump3, grid3):
    f = bump3.radial(grid3.nodes)
    for lam in (50.0, 500.0, 5000.0):
        sup = np.abs(radial_green_apply(lam, f, grid3)).max()
        assert sup <= f.max() / lam * 1.02


def test_shell_kernel_zero_lambda_limit():
    r, s = np.array([0.3, 1.0, 2.0]), np.array([1.0, 1.0, 0.5])
    np.testing.assert_allclose(shell_kernel(1e-9, r, s), 1 / (2 * np.pi * np.maximum(r, s)),
                               rtol=1e-8)


def test_kernel_positive(grid3, grid1):
    assert np.all(green_matrix(0.0, grid3) > 0)
    assert np.all(green_matrix(0.7, grid1) > 0)


@pytest.mark.parametrize("dim,lam,r", [(1, 0.5, 0.3), (1, 2.0, 1.7), (3, 0.5, 0.4), (3, 1.3, 2.0),
                                       (3, 0.1, 5.0), (1, 0.05, 0.0)])
def test_laplace_transform_of_heat_kernel(dim, lam, r):
    val, _ = quad(lambda t: np.exp(-lam * t) * heat_kernel(t, r, dim), 0, np.inf,
                  epsabs=1e-13, epsrel=1e-12, limit=400)
    assert val == pytest.approx(float(green_kernel(lam, r, dim)), rel=1e-6)
