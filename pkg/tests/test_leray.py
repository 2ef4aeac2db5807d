"""Leray projection, pressure source, Euler-Leray functions and moduli."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lerayflow.field_core import Field, Grid, VectorField, derivative, make_field, norms
from lerayflow.leray import (
    divergence,
    estimate_modulus,
    euler_leray_fn,
    leray_project,
    leray_source,
    modulus_refinement,
    refinement_trend,
    smoothness_budget,
    top_mode_fraction,
)


def _inner(a, b):
    return float(np.sum(a.data * b.data))


def _grad(phi: Field) -> VectorField:
    return VectorField(phi.grid, np.stack([derivative(phi, i).data for i in range(phi.grid.D)]))


# -- projection -----------------------------------------------------------

def test_gradient_is_annihilated():
    g = Grid(3, 16)
    x, y, z = g.coords()
    phi = Field(g, np.sin(x) * np.cos(2 * y) + np.cos(3 * z))
    pv, _ = leray_project(_grad(phi))
    assert np.max(np.abs(pv.data)) < 1e-13


@pytest.mark.parametrize("family", ["taylor_green", "random_solenoidal", "curl_bump"])
def test_solenoidal_fields_are_fixed(family):
    v = make_field(Grid(3, 16), family)
    pv, q = leray_project(v)
    assert np.max(np.abs(pv.data - v.data)) <= 1e-12 * np.max(np.abs(v.data))


def test_helmholtz_decomposition_reassembles_input():
    # v = w + grad phi with w solenoidal; the split must recover both parts
    g = Grid(3, 16)
    x, y, z = g.coords()
    w = make_field(g, "random_solenoidal", seed=4)
    phi = Field(g, np.sin(x + 2 * y) * np.cos(z) + 0.3 * np.cos(3 * x - y))
    v = VectorField(g, w.data + _grad(phi).data)
    pv, q = leray_project(v)
    assert np.max(np.abs(pv.data - w.data)) < 1e-12
    assert np.max(np.abs(_grad(q).data - _grad(phi).data)) < 1e-12
    assert np.max(np.abs(pv.data + _grad(q).data - v.data)) < 1e-12
    assert abs(q.data.mean()) < 1e-14


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), D=st.sampled_from([2, 3]))
def test_projection_idempotent_and_orthogonal(seed, D):
    g = Grid(D, 16)
    v = VectorField(g, np.random.default_rng(seed).normal(size=(D,) + g.shape))
    p1, _ = leray_project(v)
    p2, _ = leray_project(p1)
    assert np.max(np.abs(p2.data - p1.data)) <= 1e-12 * np.max(np.abs(p1.data))
    resid = VectorField(g, v.data - p1.data)
    assert abs(_inner(resid, p1)) <= 1e-10 * _inner(v, v)


# -- Leray source ---------------------------------------------------------

def test_source_of_constant_is_zero():
    g = Grid(3, 8)
    v = VectorField(g, np.ones((3,) + g.shape) * np.array([1.0, -2.0, 0.5])[:, None, None, None])
    assert np.max(np.abs(leray_source(v).data)) == 0.0


@pytest.mark.parametrize("A", [1.0, 0.3])
def test_source_of_taylor_green_is_minus_pressure_gradient(A):
    # p = A^2/16 (cos 2x + cos 2y)(cos 2z + 2)
    g = Grid(3, 16)
    x, y, z = g.coords()
    s = leray_source(make_field(g, "taylor_green", amplitude=A)).data
    c = A * A / 16
    exact = [2 * c * np.sin(2 * x) * (np.cos(2 * z) + 2),
             2 * c * np.sin(2 * y) * (np.cos(2 * z) + 2),
             2 * c * (np.cos(2 * x) + np.cos(2 * y)) * np.sin(2 * z)]
    for i in range(3):
        assert np.max(np.abs(s[i] - exact[i])) < 1e-14


def test_source_with_derivatives_sums_multi_indices():
    g = Grid(3, 16)
    v = make_field(g, "taylor_green")
    s0 = leray_source(v)
    s1 = leray_source(v, l=1)
    expect = s0.data + sum(derivative(s0, i).data for i in range(3))
    assert np.max(np.abs(s1.data - expect)) < 1e-13


def test_source_routes_agree_on_smooth_field():
    g = Grid(3, 32)
    v = make_field(g, "random_solenoidal", seed=3)
    a = leray_source(v, "spectral").data
    b = leray_source(v, "kernel").data
    assert np.max(np.abs(a - b)) <= 1e-3 * np.max(np.abs(a))


def test_source_rejects_bad_arguments():
    v2 = make_field(Grid(2, 8), "taylor_green")
    with pytest.raises(ValueError):
        leray_source(v2, "kernel")
    with pytest.raises(ValueError):
        leray_source(v2, "fourier")
    with pytest.raises(ValueError):
        leray_source(v2, l=-1)


# -- Euler-Leray functions ------------------------------------------------

@pytest.mark.parametrize("l", [0, 1, 2])
def test_euler_leray_of_constant(l):
    g = Grid(3, 8)
    c = VectorField(g, np.full((3,) + g.shape, 0.7))
    assert np.max(np.abs(euler_leray_fn(c, l, 1).data)) < 1e-14
    # type 0 keeps the underived product sum_j g_j g_i at gamma = 0
    assert np.max(np.abs(euler_leray_fn(c, l, 0).data - 3 * 0.49)) < 1e-14


def test_type1_order0_is_burgers_plus_source():
    g = Grid(3, 16)
    v = make_field(g, "random_solenoidal", seed=11)
    burg = np.stack([sum(v.data[j] * derivative(Field(g, v.data[i]), j).data for j in range(3))
                     for i in range(3)])
    expect = burg + leray_source(v).data
    assert np.max(np.abs(euler_leray_fn(v, 0, 1).data - expect)) < 1e-12


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10**6), lam=st.sampled_from([-1.0, 2.0]), kind=st.sampled_from([0, 1]),
       l=st.integers(0, 1))
def test_euler_leray_is_quadratic(seed, lam, kind, l):
    g = Grid(3, 8)
    v = make_field(g, "random_solenoidal", seed=seed)
    a = euler_leray_fn(VectorField(g, lam * v.data), l, kind).data
    b = lam * lam * euler_leray_fn(v, l, kind).data
    assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.max(np.abs(b)))


# measured on unit Taylor-Green data (all derivatives bounded by 1) and frozen
FROZEN_C = {0: 0.8750000000000024, 1: 1.9985503770776285, 2: 4.4806990782484615}


@pytest.mark.parametrize("l", [0, 1, 2])
@pytest.mark.parametrize("L", [2 * math.pi, math.pi])
def test_euler_leray_quadratic_bound(l, L):
    g = Grid(3, 32, L=L)
    v = make_field(g, "taylor_green", amplitude=0.5)
    k = 2 * math.pi / L
    B = 0.5 * max(1.0, k) ** (l + 1)  # every derivative up to order l+1
    assert np.max(np.abs(euler_leray_fn(v, l, 1).data)) <= FROZEN_C[l] * B * B * (1 + 1e-12)


def test_strict_smoothness_rejects_noise():
    g = Grid(3, 8)
    noise = VectorField(g, np.random.default_rng(0).normal(size=(3,) + g.shape))
    with pytest.raises(ValueError, match="resolve"):
        euler_leray_fn(noise, 1, strict=True)
    euler_leray_fn(make_field(g, "taylor_green"), 1, strict=True)


def test_smoothness_budget():
    g = Grid(3, 16)
    assert smoothness_budget(make_field(g, "taylor_green")) == 8
    assert smoothness_budget(make_field(g, "white_noise", seed=0)) == -1
    assert top_mode_fraction(np.ones(g.shape), g) == 0.0


# -- moduli ---------------------------------------------------------------

def test_modulus_of_zero_field():
    est = estimate_modulus(make_field(Grid(3, 8), "constant", value=0.0), deltas=(0.5, 0.9))
    assert est.lipschitz == 0.0 and est.holder == {0.5: 0.0, 0.9: 0.0}
    assert est[0.9] == 0.0 and est[1] == 0.0


def test_lipschitz_of_euler_leray_is_stable_under_refinement():
    build = lambda N: euler_leray_fn(make_field(Grid(3, N), "taylor_green"), 0, 1)
    rep = modulus_refinement(build, [32, 64, 128], 1.0)
    assert rep.trend == "stable" and rep.drift < 0.1


@pytest.mark.parametrize("values,trend", [
    ([1.0, 1.01, 1.02], "stable"),
    ([1.0, 1.5, 2.5], "growing"),
    ([2.5, 1.5, 1.0], "decaying"),
    ([1.0, 2.0, 1.5], "irregular"),
])
def test_refinement_trend_labels(values, trend):
    assert refinement_trend(values) == trend
