"""Mild-form Picard scheme for the scaled incompressible equations.

In scaled variables the velocity obeys

    d_tau v = kappa Delta v - c (v . grad) v + c S(v) + rho F,

with ``kappa = rho r^2 nu``, coupling ``c = rho r`` and ``S`` the Leray source
term.  On a window ``[t0, t0 + dt]`` the mild form

    v(tau) = e^{kappa (tau - t0) Delta} v(t0)
             + int_{t0}^{tau} e^{kappa (tau - s) Delta} N(v(s)) ds

is solved by Picard iteration on ``Nt + 1`` equispaced time samples, with the
time integral done by the composite trapezoid rule.  The reversed direction
flips the sign of the nonlinear terms.

A fourth-order integrating-factor Runge-Kutta integrator with a spectral
Leray projection at each stage serves as the independent reference.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .field_core import (
    Grid,
    VectorField,
    dealias_mask,
    dump_field,
    hm_cm_array,
    irfft,
    k_squared,
    rfft,
    sup_array,
    wavenumbers,
)
from .kernels import heat_tail_mass
from .leray import gradient_tensor, grad_inverse_laplacian_hat, leray_project, project_hat

log = logging.getLogger(__name__)

BURGERS_FORMS = ("derivative_on_gaussian", "derivative_on_field")
DIRECTIONS = ("forward", "reversed")


class SolverError(RuntimeError):
    """Base class for solver failures."""


class NonContractionError(SolverError):
    """Picard increments stopped shrinking."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class CFLError(SolverError):
    """Requested step violates the CFL limit."""


@dataclass(frozen=True)
class SchemeParams:
    """Parameters of the windowed Picard scheme.

    ``dt`` is the window length in scaled time.  ``tol`` is relative to
    ``max(1, |v(t0)|_{H^m cap C^m})``.
    """

    nu: float
    dt: float
    rho: float = 1.0
    r: float = 1.0
    m: int = 2
    Nt: int = 8
    tol: float = 1e-10
    max_iter: int = 40
    burgers_form: str = "derivative_on_gaussian"
    direction: str = "forward"
    nonlinear: bool = True
    dealias: bool = True
    stall_iterations: int = 3

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError("nu must be non-negative")
        if not self.dt > 0:
            raise ValueError("window length dt must be positive")
        if not (self.rho > 0 and self.r > 0):
            raise ValueError("rho and r must be positive")
        if self.Nt < 2 or self.m < 0 or self.max_iter < 2:
            raise ValueError("need Nt >= 2, m >= 0, max_iter >= 2")
        if self.burgers_form not in BURGERS_FORMS:
            raise ValueError(f"burgers_form must be one of {BURGERS_FORMS}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")

    @property
    def kappa(self) -> float:
        return self.rho * self.r**2 * self.nu

    @property
    def coupling(self) -> float:
        return self.rho * self.r

    def replace(self, **kw) -> "SchemeParams":
        d = asdict(self)
        d.update(kw)
        return SchemeParams(**d)


@dataclass(frozen=True)
class ForcingSpec:
    """Body force sampled in time; linear interpolation between samples."""

    mode: str = "none"
    times: Optional[np.ndarray] = None
    fields: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in ("none", "table", "derived_from_solution"):
            raise ValueError(f"unknown forcing mode {self.mode!r}")
        if self.mode != "none":
            if self.times is None or self.fields is None or len(self.times) != len(self.fields):
                raise ValueError("forcing table needs matching times and fields")
            if np.any(np.diff(self.times) <= 0):
                raise ValueError("forcing times must increase")

    def at(self, t: float) -> Optional[np.ndarray]:
        if self.mode == "none":
            return None
        ts = self.times
        span = max(abs(ts[-1]), 1.0) * 1e-12
        if t < ts[0] - span or t > ts[-1] + span:
            raise ValueError(f"forcing requested at t={t} outside [{ts[0]}, {ts[-1]}]")
        j = int(np.searchsorted(ts, t))
        if j < len(ts) and abs(ts[j] - t) <= span:
            return self.fields[j]
        if j > 0 and abs(ts[j - 1] - t) <= span:
            return self.fields[j - 1]
        j = min(max(j, 1), len(ts) - 1)
        w = (t - ts[j - 1]) / (ts[j] - ts[j - 1])
        return (1 - w) * self.fields[j - 1] + w * self.fields[j]


NO_FORCING = ForcingSpec()


@dataclass
class PicardReport:
    window: int
    t0: float
    increments: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    converged: bool = False
    first_counted: int = 1
    tail: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.increments)

    def max_ratio_from(self, k: int = 2) -> float:
        """Largest ratio ``inc_j / inc_{j-1}`` over ``j >= k``."""
        vals = [q for j, q in self._indexed_ratios() if j >= k]
        return max(vals) if vals else 0.0

    def _indexed_ratios(self):
        start = self.first_counted + 1
        return [(start + n, q) for n, q in enumerate(self.ratios)]

    def as_dict(self) -> dict:
        return {
            "window": self.window,
            "t0": self.t0,
            "increments": list(self.increments),
            "ratios": list(self.ratios),
            "converged": self.converged,
            "first_counted": self.first_counted,
            "tail": self.tail,
        }


@dataclass
class Trajectory:
    """Sampled solution with per-window reports."""

    grid: Grid
    times: np.ndarray
    states: np.ndarray
    reports: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def state(self, k: int) -> VectorField:
        return VectorField(self.grid, self.states[k])

    @property
    def final(self) -> VectorField:
        return self.state(-1)

    def dump(self, directory) -> Path:
        """Write one binary dump per sample plus ``manifest.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        names = []
        for k in range(len(self.times)):
            name = f"state_{k:05d}.bin"
            dump_field(self.state(k), d / name)
            names.append(name)
        manifest = {
            "times": [float(t) for t in self.times],
            "grid": {"D": self.grid.D, "N": self.grid.N, "L": self.grid.L},
            "params": self.params,
            "reports": [r.as_dict() if hasattr(r, "as_dict") else r for r in self.reports],
            "files": names,
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return d


# --------------------------------------------------------------------------
# nonlinear term

def _nonlinear_hat(path: np.ndarray, grid: Grid, params: SchemeParams,
                   forcing: Optional[list]) -> np.ndarray:
    """rfft of ``N(v)`` at every sample of ``path`` (shape ``(S, D, *grid)``)."""
    D = grid.D
    spec_shape = path.shape[:2] + (grid.N,) * (D - 1) + (grid.N // 2 + 1,)
    out = np.zeros(spec_shape, dtype=complex)
    if params.nonlinear:
        ks = wavenumbers(grid, True, zero_nyquist=True)
        G = gradient_tensor(path, grid)  # (S, D_m, D_j, *grid)
        if params.burgers_form == "derivative_on_field":
            B = np.einsum("sj...,sij...->si...", path, G)
            Bh = rfft(B, grid)
        else:
            Bh = np.zeros_like(out)
            for i in range(D):
                for j in range(D):
                    Bh[:, i] += 1j * ks[j] * rfft(path[:, j] * path[:, i], grid)
        f = np.einsum("smj...,sjm...->s...", G, G)
        Lh = grad_inverse_laplacian_hat(rfft(f, grid), grid)
        sign = 1.0 if params.direction == "forward" else -1.0
        out += (sign * params.coupling) * (Lh - Bh)
    if forcing is not None:
        out += params.rho * rfft(np.stack(forcing), grid)
    if params.dealias:
        out *= dealias_mask(grid)
    return out


def _heat_factors(grid: Grid, params: SchemeParams) -> list:
    k2 = k_squared(grid)
    hh = params.dt / params.Nt
    if params.kappa == 0:
        return [np.ones_like(k2) for _ in range(params.Nt + 1)]
    return [np.exp(-params.kappa * j * hh * k2) for j in range(params.Nt + 1)]


def _duhamel(data_hat: np.ndarray, N_hat: np.ndarray, E: list, params: SchemeParams,
             linear_only: bool = False) -> np.ndarray:
    hh = params.dt / params.Nt
    S = params.Nt + 1
    out = np.empty((S,) + data_hat.shape, dtype=complex)
    out[0] = data_hat
    for n in range(1, S):
        acc = E[n] * data_hat
        if not linear_only:
            for mm in range(n + 1):
                w = 0.5 * hh if mm in (0, n) else hh
                acc = acc + w * (E[n - mm] * N_hat[mm])
        out[n] = acc
    return out


def sample_times(t0: float, params: SchemeParams) -> np.ndarray:
    return t0 + params.dt * np.arange(params.Nt + 1) / params.Nt


def _forcing_samples(forcing: Optional[ForcingSpec], times) -> Optional[list]:
    if forcing is None or forcing.mode == "none":
        return None
    return [forcing.at(t) for t in times]


def picard_step(path: np.ndarray, data: VectorField, params: SchemeParams, t0: float = 0.0,
                forcing: Optional[ForcingSpec] = None) -> np.ndarray:
    """One Picard map: ``v^(k) -> v^(k+1)`` on the window starting at ``t0``.

    ``path`` holds the iterate at the ``Nt + 1`` sample times, shape
    ``(Nt + 1, D, *grid)``.
    """
    grid = data.grid
    if path.shape != (params.Nt + 1, grid.D) + grid.shape:
        raise ValueError(f"path shape {path.shape} does not match the scheme")
    data_hat = rfft(data.data, grid)
    E = _heat_factors(grid, params)
    N_hat = _nonlinear_hat(path, grid, params, _forcing_samples(forcing, sample_times(t0, params)))
    return irfft(_duhamel(data_hat, N_hat, E, params), grid)


def increment_norm(diff: np.ndarray, grid: Grid, m: int) -> float:
    """``max_{tau, i} |delta v_i(tau)|_{H^m cap C^m}`` over a path difference."""
    return float(np.max(hm_cm_array(diff, grid, m)))


@dataclass
class LocalSolution:
    times: np.ndarray
    path: np.ndarray
    report: PicardReport

    @property
    def end(self) -> np.ndarray:
        return self.path[-1]


def solve_local(data: VectorField, params: SchemeParams, t0: float = 0.0,
                forcing: Optional[ForcingSpec] = None, window: int = 0) -> LocalSolution:
    """Picard iteration on one window, starting from the projected data."""
    grid = data.grid
    v0, _ = leray_project(data)
    if not np.all(np.isfinite(v0.data)):
        raise SolverError("non-finite data")
    times = sample_times(t0, params)
    fsamples = _forcing_samples(forcing, times)
    data_hat = rfft(v0.data, grid)
    E = _heat_factors(grid, params)
    scale = max(1.0, float(np.max(hm_cm_array(v0.data, grid, params.m))))
    report = PicardReport(window=window, t0=float(t0))
    if params.kappa > 0:
        # heat mass outside the box: the whole-space vs periodic convolution gap
        report.tail = heat_tail_mass(grid.D, params.dt, params.kappa, grid.L / 2)

    path = np.broadcast_to(v0.data, (params.Nt + 1,) + v0.data.shape).copy()
    if params.direction == "reversed":
        # first iterate is the heat flow of the data; increments counted from k = 2
        path = irfft(_duhamel(data_hat, None, E, params, linear_only=True), grid)
        report.first_counted = 2

    prev = None
    stalled = 0
    for _ in range(params.max_iter):
        N_hat = _nonlinear_hat(path, grid, params, fsamples)
        new = irfft(_duhamel(data_hat, N_hat, E, params), grid)
        if not np.all(np.isfinite(new)):
            raise NonContractionError("Picard iterate became non-finite", report)
        inc = increment_norm(new - path, grid, params.m)
        report.increments.append(inc)
        path = new
        if prev is not None and prev > 0:
            q = inc / prev
            report.ratios.append(q)
            stalled = stalled + 1 if q >= 1.0 else 0
            if stalled >= params.stall_iterations:
                raise NonContractionError(
                    f"Picard ratios >= 1 for {stalled} consecutive iterations "
                    f"(window {window}, ratios {report.ratios[-stalled:]})", report)
        prev = inc
        if inc <= params.tol * scale:
            report.converged = True
            break
    if not report.converged:
        raise SolverError(f"Picard iteration did not reach tolerance in {params.max_iter} steps")
    log.debug("window %d converged in %d iterations", window, report.iterations)
    return LocalSolution(times=times, path=path, report=report)


def solve_global(data: VectorField, params: SchemeParams, n_windows: int, t0: float = 0.0,
                 forcing: Optional[ForcingSpec] = None, keep: str = "ends") -> Trajectory:
    """Chain ``n_windows`` local solves, re-projecting the data of each window.

    ``keep="ends"`` stores window end states, ``keep="all"`` every sample.
    """
    if n_windows < 1:
        raise ValueError("need at least one window")
    if keep not in ("ends", "all"):
        raise ValueError("keep must be 'ends' or 'all'")
    grid = data.grid
    times = [t0]
    states = [leray_project(data)[0].data]
    reports = []
    cur = data
    t = t0
    for w in range(n_windows):
        sol = solve_local(cur, params, t, forcing, window=w)
        reports.append(sol.report)
        if keep == "all":
            times.extend(sol.times[1:])
            states.extend(sol.path[1:])
        else:
            times.append(sol.times[-1])
            states.append(sol.end)
        t = float(sol.times[-1])
        cur = VectorField(grid, sol.end)
    return Trajectory(grid, np.asarray(times), np.stack(states), reports, asdict(params))


def force_from_solution(traj: Trajectory, nu: float, r: float = 1.0) -> ForcingSpec:
    """Force ``F = -r^2 nu Delta v`` along a trajectory.

    Adding it to the viscous equation cancels the viscous term, so the forced
    viscous run follows the inviscid trajectory ``traj``.
    """
    grid = traj.grid
    lap = irfft(-k_squared(grid) * rfft(traj.states, grid), grid)
    return ForcingSpec("derived_from_solution", np.asarray(traj.times, float), -(r * r * nu) * lap)


# --------------------------------------------------------------------------
# reference integrator

def _reference_rhs_hat(vh: np.ndarray, grid: Grid, coupling: float, rho: float,
                       force: Optional[np.ndarray], dealias: bool) -> np.ndarray:
    v = irfft(vh, grid)
    ks = wavenumbers(grid, True, zero_nyquist=True)
    adv = np.zeros_like(v)
    for j in range(grid.D):
        adv += v[j] * irfft(1j * ks[j] * vh, grid)
    out = -coupling * project_hat(rfft(adv, grid), grid)
    if force is not None:
        out = out + rho * project_hat(rfft(force, grid), grid)
    if dealias:
        out = out * dealias_mask(grid)
    return out


def reference_integrate(data: VectorField, nu: float, horizon: float, rho: float = 1.0,
                        r: float = 1.0, forcing: Optional[ForcingSpec] = None,
                        dt: Optional[float] = None, cfl: float = 0.5, dealias: bool = True,
                        keep_every: int = 0) -> Trajectory:
    """Integrating-factor RK4 pseudospectral reference solution.

    The viscous term is integrated exactly; the projected advection term is
    advanced with classical RK4.  ``dt`` defaults to the CFL step
    ``cfl * h / (c sup|v|)``; an explicit ``dt`` above that limit raises
    :class:`CFLError`.  ``keep_every=k`` stores every ``k``-th step.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    grid = data.grid
    coupling = rho * r
    kappa = rho * r * r * nu
    v0, _ = leray_project(data)
    vmax = float(np.max(sup_array(v0.data, grid)))

    def cfl_limit(vm):
        return math.inf if vm * coupling == 0 else cfl * grid.h / (coupling * vm)

    limit = cfl_limit(vmax)
    if dt is None:
        dt = min(limit, horizon)
    elif dt > limit:
        raise CFLError(f"dt={dt} exceeds the CFL limit {limit:.3e}")
    nsteps = max(1, int(math.ceil(horizon / dt - 1e-9)))
    dt = horizon / nsteps

    k2 = k_squared(grid)
    E = np.exp(-kappa * dt * k2)
    E2 = np.exp(-kappa * 0.5 * dt * k2)
    vh = rfft(v0.data, grid)

    def rhs(wh, t):
        f = forcing.at(t) if forcing is not None else None
        return _reference_rhs_hat(wh, grid, coupling, rho, f, dealias)

    times, states = [0.0], [v0.data]
    t = 0.0
    for n in range(nsteps):
        k1 = rhs(vh, t)
        k2_ = rhs(E2 * (vh + 0.5 * dt * k1), t + 0.5 * dt)
        k3 = rhs(E2 * vh + 0.5 * dt * k2_, t + 0.5 * dt)
        k4 = rhs(E * vh + dt * (E2 * k3), t + dt)
        vh = E * vh + (dt / 6.0) * (E * k1 + 2.0 * E2 * (k2_ + k3) + k4)
        t = (n + 1) * dt
        if keep_every and (n + 1) % keep_every == 0 and n + 1 < nsteps:
            times.append(t)
            states.append(irfft(vh, grid))
        if (n + 1) % 16 == 0 or n + 1 == nsteps:
            vm = float(np.max(sup_array(irfft(vh, grid), grid)))
            if not math.isfinite(vm):
                raise SolverError("reference integrator produced non-finite values")
            if dt > cfl_limit(vm) * 1.5:
                raise CFLError(f"CFL limit violated at t={t:.4g}")
    times.append(horizon)
    states.append(irfft(vh, grid))
    return Trajectory(grid, np.asarray(times), np.stack(states), [],
                      {"nu": nu, "rho": rho, "r": r, "dt": dt, "steps": nsteps})
