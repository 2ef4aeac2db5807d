"""Windowed Picard solver, forcing, reversal and the reference integrator."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lerayflow.field_core import Grid, VectorField, hm_cm_array, make_field
from lerayflow.kernels import heat_convolve, heat_tail_mass
from lerayflow.leray import divergence
from lerayflow.mild_solver import (
    CFLError,
    ForcingSpec,
    NonContractionError,
    SchemeParams,
    SolverError,
    force_from_solution,
    picard_step,
    reference_integrate,
    sample_times,
    solve_global,
    solve_local,
)


def _rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


@pytest.fixture(scope="module")
def tg16():
    return make_field(Grid(3, 16), "taylor_green")


# -- parameters and forcing -----------------------------------------------

@pytest.mark.parametrize("kw", [
    dict(nu=-0.1), dict(dt=0.0), dict(rho=0.0), dict(r=-1.0), dict(Nt=1), dict(m=-1),
    dict(max_iter=1), dict(burgers_form="other"), dict(direction="sideways"),
])
def test_scheme_params_validation(kw):
    base = dict(nu=0.1, dt=0.01)
    base.update(kw)
    with pytest.raises(ValueError):
        SchemeParams(**base)


def test_scheme_params_derived_quantities():
    p = SchemeParams(nu=0.2, dt=0.01, rho=3.0, r=0.5)
    assert p.kappa == pytest.approx(0.15) and p.coupling == pytest.approx(1.5)
    assert p.replace(nu=0.0).kappa == 0.0
    np.testing.assert_allclose(sample_times(1.0, p), 1.0 + 0.01 * np.arange(9) / 8)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), t=st.floats(0.0, 1.0))
def test_forcing_interpolation_is_exact_for_linear_tables(a, b, t):
    ts = np.linspace(0.0, 1.0, 5)
    f = ForcingSpec("table", ts, np.array([[a + b * s] for s in ts]))
    assert f.at(t)[0] == pytest.approx(a + b * t, abs=1e-12)


def test_forcing_rejects_bad_tables():
    with pytest.raises(ValueError):
        ForcingSpec("table", np.array([0.0, 0.0]), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        ForcingSpec("wind")
    f = ForcingSpec("table", np.array([0.0, 1.0]), np.zeros((2, 1)))
    with pytest.raises(ValueError, match="outside"):
        f.at(1.5)
    assert ForcingSpec().at(0.3) is None


# -- single window --------------------------------------------------------

def test_linear_scheme_is_heat_flow():
    g = Grid(3, 16)
    v = make_field(g, "random_solenoidal", seed=2)
    p = SchemeParams(nu=0.3, dt=0.05, nonlinear=False)
    sol = solve_local(v, p)
    assert sol.report.converged
    for t, s in zip(sol.times, sol.path):
        assert np.max(np.abs(s - heat_convolve(v, t, p.kappa).data)) < 1e-13


def test_tail_mass_reported(tg16):
    p = SchemeParams(nu=0.1, dt=0.01)
    rep = solve_local(tg16, p).report
    assert rep.tail == heat_tail_mass(3, 0.01, 0.1, math.pi)
    assert solve_local(tg16, p.replace(nu=0.0)).report.tail == 0.0


def test_converged_path_is_a_fixed_point(tg16):
    p = SchemeParams(nu=0.1, dt=0.01)
    sol = solve_local(tg16, p)
    again = picard_step(sol.path, tg16, p)
    scale = max(1.0, float(np.max(hm_cm_array(tg16.data, tg16.grid, p.m))))
    assert float(np.max(hm_cm_array(again - sol.path, tg16.grid, p.m))) <= p.tol * scale


def test_picard_step_checks_shape(tg16):
    with pytest.raises(ValueError):
        picard_step(np.zeros((3, 3) + tg16.grid.shape), tg16, SchemeParams(nu=0.1, dt=0.01))


def test_burgers_forms_agree(tg16):
    p = SchemeParams(nu=0.1, dt=0.01)
    a = solve_global(tg16, p, 3).states
    b = solve_global(tg16, p.replace(burgers_form="derivative_on_field"), 3).states
    assert np.max(np.abs(a - b)) <= 10 * p.tol


@pytest.mark.parametrize("family", ["taylor_green", "random_solenoidal"])
def test_samples_are_divergence_free(family):
    v = make_field(Grid(3, 16), family)
    tr = solve_global(v, SchemeParams(nu=0.05, dt=0.01), 2, keep="all")
    for k in range(len(tr.times)):
        s = tr.state(k)
        h1 = float(np.max(hm_cm_array(s.data, s.grid, 1)))
        assert np.max(np.abs(divergence(s).data)) <= 1e-6 * h1


def test_contraction_ratios(tg16):
    tr = solve_global(tg16, SchemeParams(nu=0.1, dt=0.01), 3)
    for rep in tr.reports:
        assert rep.converged and rep.max_ratio_from(2) <= 0.6


def test_large_window_does_not_contract():
    v = make_field(Grid(3, 16), "taylor_green", amplitude=5.0)
    with pytest.raises(NonContractionError) as exc:
        solve_local(v, SchemeParams(nu=0.01, dt=2.0))
    assert exc.value.report is not None and exc.value.report.ratios[-1] >= 1


def test_iteration_budget_exhausted(tg16):
    with pytest.raises(SolverError, match="tolerance"):
        solve_local(tg16, SchemeParams(nu=0.1, dt=0.01, tol=1e-30, max_iter=3))


def test_reversed_counts_from_two(tg16):
    rep = solve_local(tg16, SchemeParams(nu=0.0, dt=0.01, direction="reversed")).report
    assert rep.first_counted == 2
    assert rep._indexed_ratios()[0][0] == 3


# -- global ---------------------------------------------------------------

def test_euler_roundtrip_returns_data(tg16):
    # frozen regression: measured 2.5e-14 at 32^3
    p = SchemeParams(nu=0.0, dt=0.01)
    fwd = solve_global(tg16, p, 2)
    back = solve_global(fwd.final, p.replace(direction="reversed"), 2)
    assert _rel(back.final.data, tg16.data) < 1e-12


def test_forced_viscous_run_follows_euler(tg16):
    p = SchemeParams(nu=0.05, dt=0.01)
    ref = reference_integrate(tg16, 0.05, 0.05, dt=1e-3)
    unforced = _rel(solve_global(tg16, p, 5).final.data, ref.final.data)
    euler = solve_global(tg16, p.replace(nu=0.0), 5, keep="all")
    forced = solve_global(tg16, p, 5, forcing=force_from_solution(euler, 0.05), keep="all")
    assert _rel(forced.final.data, euler.final.data) <= 10 * unforced


def test_solver_matches_reference(tg16):
    tr = solve_global(tg16, SchemeParams(nu=0.1, dt=0.01), 5)
    ref = reference_integrate(tg16, 0.1, 0.05, dt=1e-3)
    assert _rel(tr.final.data, ref.final.data) < 5e-4


def test_global_validation(tg16):
    p = SchemeParams(nu=0.1, dt=0.01)
    with pytest.raises(ValueError):
        solve_global(tg16, p, 0)
    with pytest.raises(ValueError):
        solve_global(tg16, p, 1, keep="some")


def test_trajectory_dump(tmp_path, tg16):
    from lerayflow.field_core import load_field

    tr = solve_global(tg16, SchemeParams(nu=0.1, dt=0.01), 2)
    d = tr.dump(tmp_path / "traj")
    man = json.loads((d / "manifest.json").read_text())
    assert man["times"] == pytest.approx([0.0, 0.01, 0.02])
    assert len(man["reports"]) == 2 and man["grid"]["N"] == 16
    assert np.array_equal(load_field(d / man["files"][-1]).data, tr.final.data)


# -- reference integrator -------------------------------------------------

@pytest.mark.parametrize("nu", [0.05, 0.2])
def test_reference_matches_2d_taylor_green(nu):
    # v(t) = v(0) exp(-2 nu t) for unit wavenumber; the advection is a pure gradient
    g = Grid(2, 32)
    v = make_field(g, "taylor_green")
    tr = reference_integrate(v, nu, 0.5, dt=0.01)
    assert np.max(np.abs(tr.final.data - math.exp(-2 * nu * 0.5) * v.data)) < 1e-6


def test_reference_cfl_guard(tg16):
    with pytest.raises(CFLError):
        reference_integrate(tg16, 0.1, 1.0, dt=1.0)
    with pytest.raises(ValueError):
        reference_integrate(tg16, 0.1, 0.0)
