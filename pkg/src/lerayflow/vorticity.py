"""Vorticity form of the scaled equations in three dimensions.

``omega = curl v`` evolves by

    d_tau omega = kappa Delta omega - c (v . grad) omega + c S(v) omega,

with ``S`` the symmetric velocity gradient, ``kappa = rho r^2 nu`` and
``c = rho r``.  The velocity is recovered by Biot-Savart,
``v = curl Delta^{-1}(-omega)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .field_core import (
    Grid,
    NormReport,
    VectorField,
    dealias_mask,
    irfft,
    k_squared,
    l2_array,
    norms,
    rfft,
    sup_array,
    wavenumbers,
)
from .kernels import periodic_grad_convolve
from .leray import gradient_tensor
from .mild_solver import CFLError, SchemeParams


def _require_3d(grid: Grid):
    if grid.D != 3:
        raise ValueError("vorticity tools are implemented for D = 3")


def _curl_hat(vh: np.ndarray, grid: Grid) -> np.ndarray:
    k = wavenumbers(grid, True, zero_nyquist=True)
    return np.stack([
        1j * (k[1] * vh[2] - k[2] * vh[1]),
        1j * (k[2] * vh[0] - k[0] * vh[2]),
        1j * (k[0] * vh[1] - k[1] * vh[0]),
    ])


def curl(v: VectorField) -> VectorField:
    _require_3d(v.grid)
    return VectorField(v.grid, irfft(_curl_hat(rfft(v.data, v.grid), v.grid), v.grid))


def _biot_savart_hat(wh: np.ndarray, grid: Grid) -> np.ndarray:
    # |k|^2 from the Nyquist-free wavenumbers of the curl, so curl inverts exactly
    k2 = sum(k * k for k in wavenumbers(grid, True, zero_nyquist=True))
    inv = np.zeros_like(k2)
    nz = k2 > 0
    inv[nz] = 1.0 / k2[nz]
    return _curl_hat(wh * inv, grid)


def solenoidal_defect(omega: VectorField) -> float:
    """``|div omega|_L2 / |grad omega|_L2`` (0 for the zero field)."""
    g = omega.grid
    wh = rfft(omega.data, g)
    k = wavenumbers(g, True, zero_nyquist=True)
    div = sum(k[j] * wh[j] for j in range(3))
    scale = math.sqrt(float(np.sum(np.abs(wh) ** 2 * k_squared(g))))
    if scale == 0.0:
        return 0.0
    return math.sqrt(float(np.sum(np.abs(div) ** 2))) / scale


def biot_savart(omega: VectorField, route: str = "spectral", tol: float = 1e-6) -> VectorField:
    """Velocity with ``curl v = omega`` for solenoidal, mean-free ``omega``.

    ``route="kernel"`` evaluates ``v = -int grad G_per(x - z) x omega(z) dz``
    by the corrected quadrature used for the Leray source.  Inputs whose
    relative divergence exceeds ``tol`` are rejected.
    """
    g = omega.grid
    _require_3d(g)
    if route not in ("spectral", "kernel"):
        raise ValueError(f"unknown route {route!r}")
    defect = solenoidal_defect(omega)
    if defect > tol:
        raise ValueError(f"omega is not solenoidal (relative divergence {defect:.2e})")
    if route == "spectral":
        return VectorField(g, irfft(_biot_savart_hat(rfft(omega.data, g), g), g))
    w = omega.data - omega.data.mean(axis=g.axes, keepdims=True)
    # c[b][c] = int d_b G (x - z) w_c(z) dz
    c = [[periodic_grad_convolve(w[cc], g, b) for cc in range(3)] for b in range(3)]
    v = np.stack([
        -(c[1][2] - c[2][1]),
        -(c[2][0] - c[0][2]),
        -(c[0][1] - c[1][0]),
    ])
    return VectorField(g, v)


def _nonlinear(v: np.ndarray, w: np.ndarray, grid: Grid, coupling: float,
               dealias: bool) -> np.ndarray:
    """rfft of ``c (S(v) omega - (v . grad) omega)``."""
    Gv = gradient_tensor(v, grid)  # Gv[i, j] = d_j v_i
    Gw = gradient_tensor(w, grid)
    S = 0.5 * (Gv + np.swapaxes(Gv, 0, 1))
    stretch = np.einsum("ij...,j...->i...", S, w)
    advect = np.einsum("j...,ij...->i...", v, Gw)
    out = coupling * rfft(stretch - advect, grid)
    if dealias:
        out = out * dealias_mask(grid)
    return out


def _rhs_hat(wh: np.ndarray, grid: Grid, coupling: float, dealias: bool) -> np.ndarray:
    v = irfft(_biot_savart_hat(wh, grid), grid)
    return _nonlinear(v, irfft(wh, grid), grid, coupling, dealias)


def vorticity_rhs(omega: VectorField, v: Optional[VectorField], params: SchemeParams
                  ) -> VectorField:
    """``kappa Delta omega - c (v . grad) omega + c S(v) omega``.

    ``v`` defaults to ``biot_savart(omega)``.
    """
    g = omega.grid
    _require_3d(g)
    if v is None:
        v = biot_savart(omega)
    elif v.grid != g:
        raise ValueError("omega and v live on different grids")
    wh = rfft(omega.data, g)
    out = -params.kappa * k_squared(g) * wh
    if params.nonlinear:
        out = out + _nonlinear(v.data, omega.data, g, params.coupling, params.dealias)
    return VectorField(g, irfft(out, g))


def _pointwise_sup(values: np.ndarray) -> float:
    return float(np.max(np.sqrt(np.sum(values * values, axis=0))))


@dataclass
class VorticityState:
    omega: VectorField
    recovered_v: VectorField
    sup_omega: float
    time: float = 0.0
    event: Optional[str] = None

    @classmethod
    def from_omega(cls, omega: VectorField, time: float = 0.0) -> "VorticityState":
        return cls(omega, biot_savart(omega), _pointwise_sup(omega.data), time)

    @classmethod
    def from_velocity(cls, v: VectorField, time: float = 0.0) -> "VorticityState":
        return cls.from_omega(curl(v), time)

    @property
    def finite(self) -> bool:
        return self.event is None


def step_vorticity(state, params: SchemeParams, dt: float, n_steps: int = 1,
                   cfl: float = 0.5) -> VorticityState:
    """Advance by ``n_steps`` integrating-factor RK4 steps of size ``dt``.

    The velocity is refreshed from the vorticity by Biot-Savart at every
    stage.  ``dt`` above ``cfl * h / (c sup|v|)`` raises :class:`CFLError`.
    Non-finite values do not raise; the returned state carries
    ``event="non-finite"`` and ``sup_omega = inf``.
    """
    if isinstance(state, VectorField):
        state = VorticityState.from_omega(state)
    g = state.omega.grid
    _require_3d(g)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not state.finite:
        return state
    k2 = k_squared(g)
    E = np.exp(-params.kappa * dt * k2)
    E2 = np.exp(-params.kappa * 0.5 * dt * k2)
    wh = rfft(state.omega.data, g)
    c = params.coupling

    def N(x):
        if not params.nonlinear:
            return np.zeros_like(x)
        return _rhs_hat(x, g, c, params.dealias)

    t = state.time
    with np.errstate(all="ignore"):
        for _ in range(n_steps):
            vmax = _pointwise_sup(irfft(_biot_savart_hat(wh, g), g))
            if not math.isfinite(vmax):
                break
            if params.nonlinear and c * vmax > 0 and dt > cfl * g.h / (c * vmax):
                raise CFLError(f"dt={dt} exceeds the CFL limit {cfl * g.h / (c * vmax):.3e}")
            k1 = N(wh)
            k2_ = N(E2 * (wh + 0.5 * dt * k1))
            k3 = N(E2 * wh + 0.5 * dt * k2_)
            k4 = N(E * wh + dt * (E2 * k3))
            wh = E * wh + (dt / 6.0) * (E * k1 + 2.0 * E2 * (k2_ + k3) + k4)
            t += dt
        w = irfft(wh, g)
        omega = VectorField(g, w)
        sup = _pointwise_sup(w) if np.all(np.isfinite(w)) else math.inf
    if not math.isfinite(sup):
        return VorticityState(omega, omega, math.inf, t, "non-finite")
    v = VectorField(g, irfft(_biot_savart_hat(wh, g), g))
    return VorticityState(omega, v, sup, t)


@dataclass
class VorticityRun:
    states: list

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.states])

    @property
    def sup_omega(self) -> np.ndarray:
        return np.array([s.sup_omega for s in self.states])

    @property
    def bkm_integral(self) -> np.ndarray:
        return bkm_integral(self.times, self.sup_omega)

    @property
    def event(self) -> Optional[str]:
        return self.states[-1].event

    def indicator(self, **kw) -> "BlowupFit":
        return blowup_indicator(self.states, **kw)


def run_vorticity(omega0: VectorField, params: SchemeParams, horizon: float, dt: float,
                  record_every: int = 1, cfl: float = 0.5) -> VorticityRun:
    """Step from ``omega0`` to ``horizon``, keeping every ``record_every``-th state.

    Stops early at a non-finite event.
    """
    n = max(1, int(round(horizon / dt)))
    dt = horizon / n
    st = VorticityState.from_omega(omega0)
    states = [st]
    for j in range(0, n, record_every):
        st = step_vorticity(st, params, dt, min(record_every, n - j), cfl)
        states.append(st)
        if not st.finite:
            break
    return VorticityRun(states)


def bkm_integral(times, sup_omega) -> np.ndarray:
    """Running trapezoid integral of ``sup |omega|``."""
    t = np.asarray(times, dtype=float)
    s = np.asarray(sup_omega, dtype=float)
    out = np.zeros_like(s)
    out[1:] = np.cumsum(0.5 * (s[1:] + s[:-1]) * np.diff(t))
    return out


@dataclass(frozen=True)
class BlowupFit:
    exponent: float
    T_est: float
    r2: float
    label: str
    bkm: np.ndarray

    @property
    def indicative(self) -> bool:
        return self.label == "indicative growth"


def _loglog_fit(t, s, T):
    x = np.log(T - t)
    y = np.log(s)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return float(coef[0]), r2


def blowup_indicator(times, sup_omega: Optional[Sequence[float]] = None,
                     T_est: Optional[float] = None, exponent_max: float = -0.9,
                     r2_min: float = 0.95) -> BlowupFit:
    """Fit ``sup|omega| ~ c (T_est - t)^p`` and label the growth.

    ``T_est`` is chosen to maximise the log-log coefficient of determination
    unless given.  The label is ``"indicative growth"`` when
    ``p <= exponent_max`` and ``R^2 >= r2_min``, otherwise ``"none"``.
    Accepts either ``(times, sup_omega)`` or a sequence of
    :class:`VorticityState`.  A
    fit is an indicator, never a proof of blow-up.
    """
    if sup_omega is None:
        states = [st for st in times if st.finite]
        times = [st.time for st in states]
        sup_omega = [st.sup_omega for st in states]
    t = np.asarray(times, dtype=float)
    s = np.asarray(sup_omega, dtype=float)
    if t.size < 4:
        raise ValueError("need at least four samples")
    if np.any(np.diff(t) <= 0):
        raise ValueError("sample times must increase")
    if np.any(s <= 0):
        raise ValueError("sup|omega| must be positive for a log fit")
    bkm = bkm_integral(t, s)
    if np.ptp(s) <= 1e-14 * np.max(s):
        return BlowupFit(0.0, math.inf, 1.0, "none", bkm)
    span = t[-1] - t[0]
    if T_est is None:
        def neg_r2(logd):
            return -_loglog_fit(t, s, t[-1] + span * math.exp(logd))[1]
        grid = np.linspace(-12, 8, 81)
        vals = [neg_r2(x) for x in grid]
        j = int(np.argmin(vals))
        lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, len(grid) - 1)]
        res = optimize.minimize_scalar(neg_r2, bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-10})
        T_est = t[-1] + span * math.exp(res.x)
    p, r2 = _loglog_fit(t, s, T_est)
    label = "indicative growth" if (p <= exponent_max and r2 >= r2_min) else "none"
    return BlowupFit(p, float(T_est), r2, label, bkm)


@dataclass(frozen=True)
class VorticityBoundReport:
    velocity: NormReport
    omega_l2: float
    omega_sup: float

    @property
    def ratio(self) -> float:
        return self.velocity.hm_cm / (self.omega_l2 + self.omega_sup)


def velocity_bounds_from_vorticity(omega: VectorField, m: int = 1) -> VorticityBoundReport:
    """``H^m cap C^m`` norms of the Biot-Savart velocity next to ``|omega|_{L2 cap C}``."""
    v = biot_savart(omega)
    g = omega.grid
    w = omega.data
    return VorticityBoundReport(
        velocity=norms(v, m),
        omega_l2=float(np.max(l2_array(w, g))),
        omega_sup=float(np.max(sup_array(w, g))),
    )


__all__ = [
    "curl",
    "biot_savart",
    "vorticity_rhs",
    "VorticityState",
    "step_vorticity",
    "run_vorticity",
    "bkm_integral",
    "blowup_indicator",
    "velocity_bounds_from_vorticity",
]
