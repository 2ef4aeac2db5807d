"""Space-time scaling, damping and growth estimates, parameter rules and auto-control.

The scaled velocity is ``v^{rho,r}(tau, z) = v(t0 + rho tau, z / r)``: node
values are unchanged, the box length is multiplied by ``r`` and time is
divided by ``rho``.  In scaled variables the diffusivity is ``rho r^2 nu``
and the nonlinear coupling ``rho r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .field_core import (
    AnyField,
    Grid,
    VectorField,
    hm_cm_array,
    l2_array,
    multi_indices,
    rfft,
    spectral_derivative,
    wavenumbers,
)
from .kernels import AutoControlConstants, heat_convolve, autocontrol_constants
from .mild_solver import SchemeParams, solve_local

DIRECTIONS = ("to_scaled", "to_original")


def scale_field(v: AnyField, t: float, rho: float, r: float, direction: str = "to_scaled",
                t0: float = 0.0):
    """Map a field and its time between original and scaled variables.

    Returns ``(field, time)``.  Node values are unchanged; the grid length is
    multiplied (``to_scaled``) or divided (``to_original``) by ``r``.
    """
    if not (rho > 0 and r > 0):
        raise ValueError("rho and r must be positive")
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    g = v.grid
    if direction == "to_scaled":
        grid = Grid(g.D, g.N, g.L * r, g.max_points)
        t_new = (t - t0) / rho
    else:
        grid = Grid(g.D, g.N, g.L / r, g.max_points)
        t_new = t0 + rho * t
    return type(v)(grid, np.array(v.values), v.representation), t_new


# --------------------------------------------------------------------------
# parameter rules

def param_rule_navier(delta: float) -> float:
    """Smallest admissible ``mu``, ``(2 + delta) / delta``, for ``rho = dt^mu``."""
    if not 0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 1/2)")
    return (2.0 + delta) / delta


def param_rule_smallnu(nu: float, delta: float) -> float:
    """Smallest ``r`` with ``r >= (1/nu)^((1-delta)/(1-2 delta))``; 1 when ``nu >= 1``."""
    if not nu > 0:
        raise ValueError("nu must be positive")
    if not 0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 1/2)")
    if nu >= 1:
        return 1.0
    return (1.0 / nu) ** ((1.0 - delta) / (1.0 - 2.0 * delta))


@dataclass(frozen=True)
class EulerLimitParams:
    """Viscosity-limit parameters at one window length ``dt``."""

    dt: float
    mu: float
    mu_min: float
    nu: float
    rho: float
    r: float

    @property
    def identity(self) -> float:
        """``4 rho nu r^2``, equal to 4 by construction."""
        return 4.0 * self.rho * self.nu * self.r**2


def euler_limit_mu_min(delta: float) -> float:
    if not 0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 1/2)")
    return 5.0 + 3.0 * delta


def param_rule_euler_limit(delta: float, dt: float, mu: Optional[float] = None) -> EulerLimitParams:
    """``nu = sqrt(dt)``, ``rho = dt^mu`` and ``r = (rho nu)^(-1/2)``.

    The choice of ``r`` makes ``4 rho nu r^2 = 4`` for every ``dt``.  ``mu``
    defaults to its minimum ``5 + 3 delta``.
    """
    mu_min = euler_limit_mu_min(delta)
    mu = mu_min if mu is None else mu
    if mu < mu_min:
        raise ValueError(f"euler limit: mu >= 5 + 3*delta = {mu_min:g}, got {mu:g}")
    if not 0 < dt < 1:
        raise ValueError("dt must lie in (0, 1)")
    nu = math.sqrt(dt)
    rho = dt**mu
    r = dt ** (-(2.0 * mu + 1.0) / 4.0)
    return EulerLimitParams(dt=dt, mu=mu, mu_min=mu_min, nu=nu, rho=rho, r=r)


def navier_params(mu: float, delta: float, nu: float, dt: float, **kw) -> SchemeParams:
    """Scheme parameters with ``rho = dt^mu`` and ``r = max(dt^(-mu/2), r_min(nu))``."""
    mu_min = param_rule_navier(delta)
    if mu <= mu_min:
        raise ValueError(f"condfin: mu > (2+delta)/delta = {mu_min:g}, got {mu:g}")
    r = max(dt ** (-mu / 2.0), param_rule_smallnu(nu, delta))
    return SchemeParams(nu=nu, dt=dt, rho=dt**mu, r=r, **kw)


# --------------------------------------------------------------------------
# damping and growth

@dataclass(frozen=True)
class DampingBound:
    c_n: float
    c_D: float
    bound_total: float
    measured: float
    data_l2: float
    smallness: float

    @property
    def smallness_ok(self) -> bool:
        return self.smallness <= 1.0

    @property
    def holds(self) -> bool:
        return self.measured <= self.bound_total * (1 + 1e-12) + 1e-300


def damping_bound(v: AnyField, params: SchemeParams, tau: Optional[float] = None) -> DampingBound:
    """Damping estimate for ``|v * G(tau)|_L2`` with cutoff frequency ``dt``.

    ``c_n`` is the largest squared Fourier transform over frequencies with
    ``|xi_j| <= dt`` on every axis (the discrete set always holds
    ``xi = 0``).  The Fourier transform is approximated by ``L^D`` times the
    series amplitude.  Vector fields use the Euclidean sum over components.
    The smallness number ``8 pi^2 kappa dt^3`` is reported alongside.
    """
    g = v.grid
    D = g.D
    dt = params.dt
    tau = dt if tau is None else tau
    kappa = params.kappa
    vals = v.data
    comps = vals if isinstance(v, VectorField) else vals[None]
    amp = rfft(comps, g) / g.N**D
    power = np.sum(np.abs(amp) ** 2, axis=0) * g.L ** (2 * D)
    xi = [k / (2 * math.pi) for k in wavenumbers(g, True)]
    box = np.ones(power.shape, dtype=bool)
    for x in xi:
        box = box & (np.abs(x) <= dt)
    c_n = float(power[box].max())
    c_D = c_n * 8 * D * math.pi**2 * kappa * tau * dt ** (1 + D)
    l2 = math.sqrt(float(np.sum(comps * comps)) * g.cell_volume)
    bound = l2 * math.exp(-4 * math.pi**2 * kappa * tau * dt**2) + c_D
    heat = heat_convolve(type(v)(g, vals), tau, kappa).data
    measured = math.sqrt(float(np.sum(heat * heat)) * g.cell_volume)
    smallness = 8 * math.pi**2 * kappa * dt**3
    return DampingBound(c_n=c_n, c_D=c_D, bound_total=bound, measured=measured, data_l2=l2,
                        smallness=smallness)


def growth_bound(params: SchemeParams, modulus: float, C: float, delta: float) -> float:
    """``rho r L (4 rho r^2 nu)^delta dt^(1-delta) C`` for a data modulus ``L``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return (params.coupling * modulus * (4 * params.kappa) ** delta
            * params.dt ** (1 - delta) * C)


@dataclass(frozen=True)
class Verdict:
    damping: float
    growth: float
    smallness: float
    data_norm: float
    verdict: str


def compare_damping_growth(data_norm: float, params: SchemeParams, delta: float) -> Verdict:
    """Compare the damping and growth dependences on one window.

    damping ``~ |v| nu rho r^2 dt^3``; growth ``~ rho^(1+delta) r^(1+2 delta)
    nu^delta dt^(1-delta)``.  The result is inconclusive when the data norm is
    below 1 or the smallness condition ``8 pi^2 kappa dt^3 <= 1`` fails.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    nu, rho, r, dt = params.nu, params.rho, params.r, params.dt
    damping = data_norm * nu * rho * r * r * dt**3
    growth = rho ** (1 + delta) * r ** (1 + 2 * delta) * nu**delta * dt ** (1 - delta)
    smallness = 8 * math.pi**2 * params.kappa * dt**3
    if data_norm < 1 or smallness > 1:
        verdict = "inconclusive"
    elif damping > growth:
        verdict = "damping_dominates"
    else:
        verdict = "growth_dominates"
    return Verdict(damping, growth, smallness, data_norm, verdict)


# --------------------------------------------------------------------------
# auto-control

def autocontrol_time(dtau):
    """``s = dtau / sqrt(1 - dtau^2)`` and ``ds/dtau = (1 - dtau^2)^(-3/2)``."""
    dtau = np.asarray(dtau, dtype=float)
    if np.any(dtau < 0) or np.any(dtau >= 1):
        raise ValueError("auto-control time needs 0 <= dtau < 1")
    one = 1.0 - dtau * dtau
    return dtau / np.sqrt(one), one ** (-1.5)


def autocontrol_transform(path: np.ndarray, times, t0: float):
    """``u(s) = v(tau) / (1 + tau)`` at the auto-control times of a window.

    Returns ``(s, u_path, ds_dtau)``.
    """
    times = np.asarray(times, dtype=float)
    s, ds = autocontrol_time(times - t0)
    scale = 1.0 / (1.0 + times)
    u = path * scale.reshape((-1,) + (1,) * (path.ndim - 1))
    return s, u, ds


def autocontrol_inverse(u_path: np.ndarray, s, t0: float):
    """Undo :func:`autocontrol_transform`: ``dtau = s / sqrt(1 + s^2)``, ``v = (1 + tau) u``.

    Returns ``(times, v_path)``.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("auto-control time needs s >= 0")
    times = t0 + s / np.sqrt(1.0 + s * s)
    v = u_path * (1.0 + times).reshape((-1,) + (1,) * (u_path.ndim - 1))
    return times, v


@dataclass
class AutoControlRow:
    window: int
    t0: float
    s_end: float
    ds_dtau_end: float
    u_norm: float
    v_norm_end: float
    envelope_start: float
    envelope_end: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class AutoControlReport:
    constants: AutoControlConstants
    nu: float
    dt: float
    rows: list = field(default_factory=list)

    def envelope(self) -> list:
        """``(window, t_k, C0 (1 + t_k))`` rows; independent of the solution."""
        return [(r.window, r.t0, r.envelope_start) for r in self.rows]

    def u_ok(self, slack: float = 1e-6) -> bool:
        return all(r.u_norm <= self.constants.C0 + slack for r in self.rows)

    def envelope_ok(self) -> bool:
        return all(r.v_norm_end <= r.envelope_end for r in self.rows)


def run_autocontrolled(data: VectorField, C0: float, T: float, nu: float,
                       rho: Optional[float] = None, dt: float = 0.5, m: int = 2, Nt: int = 8,
                       tol: float = 1e-10) -> AutoControlReport:
    """Auto-controlled run on windows of length ``dt`` up to time ``T``.

    ``data`` is given in original variables and scaled with ``r = 1/(2 C0)``.
    ``rho`` defaults to the value from :func:`autocontrol_constants` at ``nu``;
    that value is 0 at ``nu = 0``, so inviscid runs must pass ``rho``.
    Each window reports the largest ``|u|_{H^m cap C^m}`` over its samples
    and the end-point velocity norm against the envelope ``C0 (1 + t)``.
    """
    if not 0 < dt <= 0.5:
        raise ValueError("auto-control needs a window length in (0, 1/2]")
    consts = autocontrol_constants(data.grid.D, C0, nu, T)
    if rho is None:
        if consts.rho <= 0:
            raise ValueError("rho degenerates at nu = 0; pass rho explicitly")
        rho = consts.rho
    r = consts.r
    params = SchemeParams(nu=nu, dt=dt, rho=rho, r=r, m=m, Nt=Nt, tol=tol)
    v, _ = scale_field(data, 0.0, rho, r, "to_scaled")
    grid = v.grid
    report = AutoControlReport(constants=consts, nu=nu, dt=dt)
    n_windows = int(round(T / dt))
    for k in range(n_windows):
        t0 = k * dt
        sol = solve_local(v, params, t0, window=k)
        s, u, ds = autocontrol_transform(sol.path, sol.times, t0)
        u_norm = float(np.max(hm_cm_array(u, grid, m)))
        v_end = float(np.max(hm_cm_array(sol.end, grid, m)))
        report.rows.append(AutoControlRow(
            window=k, t0=t0, s_end=float(s[-1]), ds_dtau_end=float(ds[-1]), u_norm=u_norm,
            v_norm_end=v_end, envelope_start=C0 * (1 + t0), envelope_end=C0 * (1 + t0 + dt)))
        v = VectorField(grid, sol.end)
    return report


def data_norm_l2_derivatives(v: AnyField, m: int) -> float:
    """``max_{i, |beta| <= m} |D^beta v_i|_L2``, the norm used by the damping threshold."""
    g = v.grid
    vals = v.data if isinstance(v, VectorField) else v.data[None]
    best = 0.0
    for beta in multi_indices(g.D, m):
        d = spectral_derivative(vals, g, beta)
        best = max(best, float(np.max(l2_array(d, g))))
    return best


__all__ = [
    "scale_field",
    "param_rule_navier",
    "param_rule_smallnu",
    "param_rule_euler_limit",
    "navier_params",
    "damping_bound",
    "autocontrol_transform",
    "autocontrol_inverse",
    "growth_bound",
    "compare_damping_growth",
    "run_autocontrolled",
]
