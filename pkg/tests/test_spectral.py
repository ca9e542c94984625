import numpy as np
import pytest

from bbmkit import (ConvergenceError, DomainError, Resolvent, assemble_K, beta_critical,
                    build_grid, ground_state, lambda0, make_potential, principal_eigen,
                    principal_mu, radial_green_apply)
from bbmkit.oracles import (shooting_beta_critical, sharp_indicator_beta_critical,
                            sharp_indicator_lambda0_1d)
from bbmkit.spectral import refinement_change

# frozen from the radial shooting oracle (bump a=1, h=1), agreed with Nystrom to ~1e-12
BUMP_BETA_CR = 3.16392837414


@pytest.fixture(scope="module")
def bcr(bump3, grid3):
    return beta_critical(bump3, grid3)


def test_zero_beta_gives_zero_matrix(bump3, grid3):
    assert not np.any(assemble_K(0.3, 0.0, bump3, grid3).matrix)


@pytest.mark.parametrize("lam,beta", [(0.0, 1.0), (0.2, 3.0), (4.0, 0.5)])
def test_entries_nonnegative(bump3, grid3, lam, beta):
    assert np.all(assemble_K(lam, beta, bump3, grid3).matrix >= 0)


def test_dim1_needs_positive_lambda(bump1, grid1):
    with pytest.raises(DomainError):
        assemble_K(0.0, 1.0, bump1, grid1)


@pytest.mark.parametrize("lam", [0.0, 0.7])
def test_symmetrized_similarity(bump3, grid3, lam):
    K = assemble_K(lam, 2.0, bump3, grid3)
    mu, _ = principal_eigen(K)
    top = np.linalg.eigvals(K.symmetrized()).real.max()
    assert abs(mu - top) <= 1e-8 * mu


def test_rank_one():
    K = np.zeros((5, 5))
    K[2, 2] = 3.5
    mu, h = principal_eigen(K)
    assert mu == pytest.approx(3.5)
    assert h[2] == 1.0


def test_against_dense_eigensolver(rng):
    for _ in range(5):
        K = rng.uniform(0, 1, size=(32, 32))
        mu, h = principal_eigen(K)
        assert abs(mu - np.abs(np.linalg.eigvals(K)).max()) <= 1e-9 * mu
        assert np.all(h > 0) and h.max() == 1.0
        assert np.max(np.abs(K @ h - mu * h)) <= 1e-10 * mu


def test_homogeneous(bump3, grid3):
    K = assemble_K(0.2, 1.0, bump3, grid3).matrix
    mu, _ = principal_eigen(K)
    assert principal_eigen(7.5 * K)[0] == pytest.approx(7.5 * mu, rel=1e-11)


def test_zero_operator_rejected():
    with pytest.raises(DomainError):
        principal_eigen(np.zeros((3, 3)))


def test_slow_convergence_reports():
    K = np.array([[1.0, 0.0], [0.0, 1.0 - 1e-9]]) + 1e-12
    with pytest.raises(ConvergenceError, match="spectral gap"):
        principal_eigen(K, max_iter=50)


def test_beta_critical_dim1(bump1, grid1):
    assert beta_critical(bump1, grid1) == 0.0
    table = make_potential({"dim": 1, "shape": "table", "xs": [-1, 0, 2], "vs": [0, 5, 0]})
    assert beta_critical(table) == 0.0


def test_beta_critical_bump(bcr):
    assert bcr == pytest.approx(BUMP_BETA_CR, rel=1e-9)


@pytest.mark.slow
def test_beta_critical_shooting_oracle(bump3):
    assert shooting_beta_critical(bump3) == pytest.approx(BUMP_BETA_CR, rel=1e-9)


def test_beta_critical_sharp_limit():
    vals = []
    for eps in (0.2, 0.1, 0.05):
        p = make_potential({"dim": 3, "shape": "indicator_smoothed", "radius": 1.0,
                            "height": 1.0, "eps": eps})
        vals.append(beta_critical(p, build_grid(p, 128)))
    target = sharp_indicator_beta_critical()
    err = np.abs(np.array(vals) - target)
    assert np.all(np.diff(err) < 0)
    assert err[-1] / target < 2e-3


def test_beta_critical_scaling(bump3, bcr):
    b2 = beta_critical(bump3.scaled(2.0))
    assert bcr / b2 == pytest.approx(4.0, rel=1e-2)


def test_lambda0_sharp_indicator_1d():
    p = make_potential({"dim": 1, "shape": "indicator_smoothed", "radius": 1.0, "height": 1.0,
                        "eps": 0.01})
    lam = lambda0(1.0, p, build_grid(p, 192))
    exact = sharp_indicator_lambda0_1d(1.0)
    assert exact == pytest.approx(0.61, abs=0.01)
    assert abs(lam - exact) < 1e-3


def test_lambda0_monotone_ladder(bump1, grid1, bump3, grid3, bcr):
    lad1 = [lambda0(b, bump1, grid1) for b in (0.2, 0.5, 1.0, 2.0, 4.0)]
    assert np.all(np.diff(lad1) > 0)
    lad3 = [lambda0(b, bump3, grid3, beta_cr=bcr) for b in bcr * np.array([1.1, 1.3, 1.6, 2, 3])]
    assert np.all(np.diff(lad3) > 0)


def test_lambda0_vanishes_at_critical(bump3, grid3, bcr):
    lams = [lambda0(bcr * (1 + d), bump3, grid3, beta_cr=bcr) for d in (1e-1, 1e-2, 1e-3)]
    assert np.all(np.diff(lams) < 0)
    assert lams[-1] < 1e-5


def test_lambda0_subcritical_rejected(bump3, grid3, bcr):
    with pytest.raises(DomainError):
        lambda0(0.9 * bcr, bump3, grid3, beta_cr=bcr)


def test_mu_strictly_decreasing(bump3, grid3):
    mus = [principal_mu(lam, bump3, grid3)[0] for lam in np.linspace(0, 3, 10)]
    assert np.all(np.diff(mus) < 0)


@pytest.fixture(scope="module")
def gs5(bump3, grid3):
    return ground_state(5.0, bump3, grid3)


def test_ground_state_fixed_point(gs5, bump3, grid3):
    back = radial_green_apply(gs5.lambda0, gs5.beta * bump3.radial(grid3.nodes) * gs5.psi, grid3)
    assert np.max(np.abs(back - gs5.psi)) <= 1e-8 * gs5.psi.max()


def test_ground_state_l2_normalized(gs5):
    # interior by the grid, exterior from the closed-form tail
    ext = np.linspace(1.0, 40, 200_001)
    tail = np.trapezoid(4 * np.pi * ext**2 * gs5.tail(ext) ** 2, ext)
    inner = gs5.grid.integrate(gs5.psi**2)
    assert inner + tail == pytest.approx(1.0, rel=1e-6)


def test_ground_state_tail(gs5):
    r = np.linspace(2, 5, 31)
    psi = gs5.radial(r)
    slope = np.polyfit(r, np.log(psi * r), 1)[0]
    assert slope == pytest.approx(-np.sqrt(2 * gs5.lambda0), rel=0.05)
    np.testing.assert_allclose(psi, gs5.tail(r), rtol=1e-9)


def test_critical_ground_state(bump3, grid3, bcr):
    gs = ground_state(bcr, bump3, grid3)
    assert gs.lambda0 == 0.0 and gs.normalization == "critical"
    r = np.geomspace(2, 20, 20)
    expo = np.polyfit(np.log(r), np.log(gs.radial(r)), 1)[0]
    assert abs(expo + 1) <= 0.05
    with pytest.raises(DomainError):
        ground_state(bcr, bump3, grid3, normalization="L2")


def test_no_ground_state_below_critical(bump3, grid3, bcr):
    with pytest.raises(DomainError):
        ground_state(0.5 * bcr, bump3, grid3)


def test_resolvent_zero_beta(bump3, grid3):
    g = bump3.radial(grid3.nodes)
    got = Resolvent(0.8, 0.0, bump3, grid3).apply(g)
    np.testing.assert_allclose(got, radial_green_apply(0.8, g, grid3), rtol=1e-14)


@pytest.mark.parametrize("shift", [0.1, 1.0, 5.0])
def test_resolvent_on_ground_state(gs5, bump3, grid3, shift):
    lam = gs5.lambda0 + shift
    targets = np.array([0.2, 0.8, 1.5, 3.0])
    on_grid, off = Resolvent(lam, 5.0, bump3, grid3).apply(gs5.radial, targets=targets, reach=12.0)
    np.testing.assert_allclose(on_grid, gs5.psi / shift, rtol=1e-6)
    np.testing.assert_allclose(off, gs5.radial(targets) / shift, rtol=1e-6)


def test_resolvent_large_lambda_decay(bump3, grid3):
    g = bump3.radial(grid3.nodes)
    lams = np.geomspace(10, 1e3, 7)
    sups = [np.abs(Resolvent(lam, 2.0, bump3, grid3).apply(g)).max() for lam in lams]
    expo = np.polyfit(np.log(lams), np.log(sups), 1)[0]
    assert abs(expo + 1) <= 0.05


def test_resolvent_positive(bump3, grid3, bcr):
    g = bump3.radial(grid3.nodes)
    for beta, lam in ((0.5 * bcr, 0.0), (5.0, 2.0)):
        out = Resolvent(lam, beta, bump3, grid3).apply(g, targets=[0.5, 2.0])
        assert np.all(out[0] > 0) and np.all(out[1] > 0)


def test_resolvent_below_spectrum_rejected(gs5, bump3, grid3):
    with pytest.raises(DomainError):
        Resolvent(0.5 * gs5.lambda0, 5.0, bump3, grid3)


def test_grid_refinement(bump3, bcr):
    g64, g128 = build_grid(bump3, 64), build_grid(bump3, 128)
    assert abs(beta_critical(bump3, g64) / bcr - 1) <= 1e-5
    assert abs(lambda0(5.0, bump3, g128) / lambda0(5.0, bump3, g64) - 1) <= 1e-5
    r = np.array([0.0, 0.5, 1.0, 2.0])
    a, b = ground_state(5.0, bump3, g64).radial(r), ground_state(5.0, bump3, g128).radial(r)
    np.testing.assert_allclose(a, b, rtol=1e-5)
    assert refinement_change(0.3, bump3, g64) <= 1e-6
