"""Heat and Laplace kernels, convolution identities and kernel constants."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from lerayflow.field_core import Grid, make_field, norms
from lerayflow.kernels import (
    GaussianSpec,
    autocontrol_constants,
    biot_savart_kernel_apply,
    check_pointwise_bound,
    direct_grad_sum,
    gaussian_deriv_eval,
    gaussian_eval,
    heat_constant,
    heat_convolve,
    heat_deriv_convolve,
    heat_kernel_norms,
    heat_tail_mass,
    kernel_grad_norms,
    laplace_kernel,
    laplace_kernel_grad,
    lattice_zeta_one,
    lipschitz_heat_bound,
    lipschitz_heat_constant,
    periodic_grad_convolve,
    pointwise_bound_constant,
    pointwise_literal_constant,
    reflect,
    rho_from_constants,
)
from lerayflow.leray import grad_inverse_laplacian_hat
from lerayflow.field_core import irfft, rfft

finite = dict(allow_nan=False, allow_infinity=False)


# -- pointwise Gaussian ---------------------------------------------------

def test_gaussian_spec_kappa():
    assert GaussianSpec(0.1, rho=2.0, r=3.0).kappa == pytest.approx(1.8)
    with pytest.raises(ValueError):
        GaussianSpec(0.0)


@pytest.mark.parametrize("t,kappa", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0)])
def test_gaussian_rejects_degenerate(t, kappa):
    with pytest.raises(ValueError):
        gaussian_eval(t, np.zeros(3), kappa)


@pytest.mark.parametrize("D", [1, 2, 3])
def test_gaussian_has_unit_mass(D):
    # radial quadrature oracle
    t, kappa = 0.3, 0.7
    area = [2.0, 2 * math.pi, 4 * math.pi][D - 1]
    y = lambda r: np.array([r] + [0.0] * (D - 1))
    mass, _ = integrate.quad(lambda r: area * r ** (D - 1) * gaussian_eval(t, y(r), kappa), 0, np.inf)
    assert mass == pytest.approx(1.0, abs=1e-10)


def test_gaussian_derivative_matches_finite_difference():
    y = np.array([0.3, -0.2, 0.5])
    h = 1e-5
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (gaussian_eval(0.2, y + e, 0.5) - gaussian_eval(0.2, y - e, 0.5)) / (2 * h)
        assert gaussian_deriv_eval(0.2, y, i, 0.5) == pytest.approx(fd, rel=1e-8)


@settings(max_examples=200, deadline=None)
@given(y=st.lists(st.floats(-5, 5, **finite), min_size=3, max_size=3),
       t=st.floats(1e-3, 10), kappa=st.floats(1e-3, 10), i=st.integers(0, 2))
def test_gaussian_derivative_antisymmetry(y, t, kappa, i):
    y = np.array(y)
    assert gaussian_deriv_eval(t, y, i, kappa) == -gaussian_deriv_eval(t, reflect(y, i), i, kappa)


def test_reflect_only_touches_one_axis():
    assert reflect([1.0, 2.0, 3.0], 1).tolist() == [1.0, -2.0, 3.0]


# -- heat convolution -----------------------------------------------------

def test_heat_on_sine_mode_is_exponential_damping():
    g = Grid(3, 16, L=2.0)
    f = make_field(g, "sine", mode=(1, 2, 0))
    k2 = (2 * math.pi / g.L) ** 2 * 5
    out = heat_convolve(f, 0.01, 0.3)
    np.testing.assert_allclose(out.data, math.exp(-0.3 * 0.01 * k2) * f.data, atol=1e-14)


def test_heat_at_zero_time_is_identity():
    f = make_field(Grid(2, 8), "white_noise", seed=3)
    assert np.array_equal(heat_convolve(f, 0.0, 1.0).data, f.data)
    assert np.array_equal(heat_convolve(f, 1.0, 0.0).data, f.data)


def test_heat_rejects_negative_time():
    with pytest.raises(ValueError):
        heat_convolve(make_field(Grid(2, 8), "constant"), -0.1, 1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), t1=st.floats(0.0, 0.5), t2=st.floats(0.0, 0.5),
       kappa=st.floats(0.01, 2.0))
def test_heat_semigroup_mass_and_maximum(seed, t1, t2, kappa):
    f = make_field(Grid(3, 8), "white_noise", seed=seed)
    a = heat_convolve(heat_convolve(f, t1, kappa), t2, kappa).data
    b = heat_convolve(f, t1 + t2, kappa).data
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(f.data))
    assert b.mean() == pytest.approx(f.data.mean(), abs=1e-14)
    # the discrete Gaussian multiplier is not a positive kernel; see test below
    assert norms(heat_convolve(f, t1, kappa), 0).l2 <= norms(f, 0).l2 * (1 + 1e-12)


def test_maximum_principle_when_kernel_is_resolved():
    g = Grid(3, 16)
    f = make_field(g, "white_noise", seed=7)
    kappa, t = 1.0, (2 * g.h) ** 2  # sqrt(kappa t) = 2h
    assert np.max(np.abs(heat_convolve(f, t, kappa).data)) <= np.max(np.abs(f.data)) + 1e-12


def test_heat_derivative_commutes():
    from lerayflow.field_core import derivative

    f = make_field(Grid(3, 16), "white_noise", seed=2)
    for i in range(3):
        a = heat_deriv_convolve(f, 0.05, i, 0.4).data
        b = derivative(heat_convolve(f, 0.05, 0.4), i).data
        assert np.max(np.abs(a - b)) < 1e-12


def test_heat_tail_mass_matches_chi_distribution():
    # |Z| sqrt(2 kappa t) with Z standard normal in R^D
    for D in (2, 3):
        t, kappa, R = 0.4, 0.8, 1.3
        oracle = stats.chi(D).sf(R / math.sqrt(2 * kappa * t))
        assert heat_tail_mass(D, t, kappa, R) == pytest.approx(oracle, rel=1e-12)


def test_heat_tail_mass_small_for_short_windows():
    assert heat_tail_mass(3, 1e-3, 0.1, math.pi) < 1e-100


# -- Lipschitz convolution constant ---------------------------------------

def test_lipschitz_heat_constant_closed_values():
    assert lipschitz_heat_constant(1) == pytest.approx(1.0, abs=1e-15)  # E Z^2
    assert lipschitz_heat_constant(3) == pytest.approx(1.5, abs=1e-14)
    assert lipschitz_heat_constant(2) == pytest.approx(4 / math.pi, abs=1e-14)


def test_lipschitz_heat_constant_monte_carlo():
    z = np.random.default_rng(0).standard_normal((400_000, 3))
    mc = np.mean(np.linalg.norm(z, axis=1) * np.abs(z[:, 0]))
    assert lipschitz_heat_constant(3) == pytest.approx(mc, rel=1e-2)


@pytest.mark.parametrize("delta", [0.1, 0.5, 0.9])
def test_lipschitz_heat_bound_holds_on_smooth_fields(delta):
    f = make_field(Grid(3, 16), "taylor_green")
    lhs, rhs = lipschitz_heat_bound(f, 0.1, 0.05, delta)
    assert 0 < lhs <= rhs


# -- pointwise derivative bound -------------------------------------------

@pytest.mark.parametrize("D", [2, 3])
@pytest.mark.parametrize("delta", [0.1, 0.5, 0.9])
def test_pointwise_constant_closed_form(D, delta):
    # sup_w w^p e^-w = p^p e^-p
    p = D / 2 + 1 - delta
    assert pointwise_bound_constant(D, delta) == pytest.approx(
        2 * math.pi ** (-D / 2) * p**p * math.exp(-p), rel=1e-14)


def test_pointwise_bound_is_tight_on_the_axis():
    D, delta, kappa, t = 3, 0.3, 0.5, 0.2
    p = D / 2 + 1 - delta
    r = math.sqrt(4 * kappa * t * p)  # w = p maximises the ratio
    chk = check_pointwise_bound(delta, kappa, [t], [[r, 0.0, 0.0]])
    assert chk.ok and chk.worst_ratio == pytest.approx(1.0, rel=1e-12)


def test_literal_constant_is_violated():
    delta, kappa = 0.3, 0.5
    rng = np.random.default_rng(1)
    ys = rng.normal(size=(2000, 3))
    taus = rng.uniform(0.01, 1.0, 2000)
    assert check_pointwise_bound(delta, kappa, taus, ys).ok
    lit = check_pointwise_bound(delta, kappa, taus, ys, C=pointwise_literal_constant(3, delta))
    assert lit.violations > 0


@pytest.mark.parametrize("delta", [0.0, 1.0])
def test_pointwise_bound_rejects_delta(delta):
    with pytest.raises(ValueError):
        pointwise_bound_constant(3, delta)


# -- Laplace and Biot-Savart kernels --------------------------------------

def test_laplace_kernel_gradient_and_harmonicity():
    y = np.array([0.4, -0.7, 0.3])
    h = 1e-4
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (laplace_kernel(y + e) - laplace_kernel(y - e)) / (2 * h)
        assert laplace_kernel_grad(y, i) == pytest.approx(fd, rel=1e-7)
    lap = sum(laplace_kernel_grad(y + e, i) - laplace_kernel_grad(y - e, i)
              for i, e in enumerate(np.eye(3) * h)) / (2 * h)
    assert abs(lap) < 1e-6


@pytest.mark.parametrize("D", [2, 3, 4])
def test_laplace_gradient_flux_is_one(D):
    # flux through the sphere of radius 2: sigma r^(D-1) * r / (sigma r^D)
    r = 2.0
    y = np.zeros(D)
    y[0] = r
    from lerayflow.kernels import sphere_area

    assert laplace_kernel_grad(y, 0) * sphere_area(D) * r ** (D - 1) == pytest.approx(1.0)


def test_biot_savart_kernel_is_gradient_cross():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(50, 3))
    h = rng.normal(size=(50, 3))
    grad = np.stack([laplace_kernel_grad(x, i) for i in range(3)], axis=-1)
    np.testing.assert_allclose(biot_savart_kernel_apply(x, h), np.cross(grad, h), rtol=1e-13)
    with pytest.raises(ValueError):
        biot_savart_kernel_apply(np.zeros(3), np.ones(3))


def test_lattice_zeta_one_known_value():
    # regularised sum over the simple cubic lattice
    assert lattice_zeta_one() == pytest.approx(-2.8372974794806, abs=1e-12)


def test_periodic_convolution_equals_direct_sum():
    g = Grid(3, 8, L=2.0)
    f = make_field(g, "white_noise", seed=5).data
    from lerayflow.kernels import _central_diff4

    corr = lattice_zeta_one() * g.h**2 / (12 * math.pi)
    for i in range(3):
        direct = direct_grad_sum(f, g, i) + corr * _central_diff4(f, g.h, i)
        assert np.max(np.abs(periodic_grad_convolve(f, g, i) - direct)) < 1e-12


def test_kernel_route_matches_spectral_gradient_of_inverse_laplacian():
    g = Grid(3, 32)
    x, y, z = g.coords()
    f = np.exp(np.sin(x) * np.cos(y)) + np.cos(2 * z) * np.sin(x + y)
    f = f - f.mean()
    ref = irfft(grad_inverse_laplacian_hat(rfft(f, g), g), g)
    for i in range(3):
        got = periodic_grad_convolve(f, g, i)
        assert np.max(np.abs(got - ref[i])) <= 1e-3 * np.max(np.abs(ref[i]))


def test_kernel_route_needs_3d():
    from lerayflow.kernels import periodic_laplace_grad_kernel

    with pytest.raises(ValueError):
        periodic_laplace_grad_kernel(Grid(2, 8), 0)


# -- auto-control constants -----------------------------------------------

def test_kernel_grad_norms_closed_values():
    # D = 3: int_B1 |cos|/(4 pi r^2) = 1/2 and int_{r>1} cos^2/(16 pi^2 r^4) = 1/(12 pi)
    l1, l2 = kernel_grad_norms(3)
    assert l1 == pytest.approx(0.5, abs=1e-15)
    assert l2 == pytest.approx(math.sqrt(1 / (12 * math.pi)), abs=1e-15)
    with pytest.raises(ValueError):
        kernel_grad_norms(2)


def test_heat_kernel_norms_against_double_quadrature():
    D, kappa, T = 3, 0.1, 0.5
    n = heat_kernel_norms(D, kappa, T)
    g = lambda r, t: 4 * math.pi * r * r * gaussian_eval(t, np.array([r, 0, 0]), kappa)
    oracle, _ = integrate.dblquad(g, 1e-12, T, 0.0, 1.0, epsabs=1e-11)
    assert n["G_L1_ball"] == pytest.approx(oracle, rel=1e-6)
    # |G_1| = |cos| |G_r|, the angular mean of |cos| over the sphere is 1/2
    gi = lambda r, t: 0.5 * 4 * math.pi * r * r * abs(gaussian_deriv_eval(t, np.array([r, 0, 0]), 0, kappa))
    oracle_i, _ = integrate.dblquad(gi, 1e-12, T, 0.0, 1.0, epsabs=1e-10)
    assert n["Gi_L1_ball"] == pytest.approx(oracle_i, rel=1e-5)


def test_autocontrol_rho_is_a_fixed_point():
    c = autocontrol_constants(3, 3.0, 0.01, 2.0)
    assert c.r == pytest.approx(1 / 6)
    C_G = heat_constant(3, c.rho * c.r**2 * 0.01, 2.0)
    assert c.rho == pytest.approx(rho_from_constants(3.0, 3, c.C_K, C_G), rel=1e-10)
    # frozen regression
    assert c.rho == pytest.approx(2.1042069e-08, rel=1e-6)


def test_autocontrol_inviscid_and_bad_inputs():
    assert autocontrol_constants(3, 3.0, 0.0, 2.0).rho == 0.0
    with pytest.raises(ValueError):
        autocontrol_constants(3, 2.0, 0.1, 2.0)
    with pytest.raises(ValueError):
        autocontrol_constants(3, 3.0, -0.1, 2.0)
