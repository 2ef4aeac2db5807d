"""Polynomial decay checks, arctan compactification and viscosity-limit diagnostics.

A field is in the decay class of order ``l`` with ``m`` derivatives when

    |D^gamma f(x)| <= c / (1 + |x|^l)   for |x| >= 1, |gamma| <= m.

On a finite box this is only testable on the annulus ``1 <= |x| <= L/2``;
trends under growing ``L`` are the numerical stand-in for "at infinity".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .field_core import AnyField, VectorField, multi_indices, spectral_derivative
from .mild_solver import SchemeParams, SolverError, solve_global

DEFAULT_CEILING = 1e6


@dataclass(frozen=True)
class DecayProfile:
    order: int
    m: int
    fitted_c: Dict[tuple, float]
    member: bool
    L: float
    ceiling: float
    fit_region: tuple

    @property
    def c_max(self) -> float:
        return max(self.fitted_c.values())

    def ratio_to(self, other: "DecayProfile") -> float:
        """Largest per-multi-index ratio ``self.c / other.c``."""
        out = 0.0
        for g, c in self.fitted_c.items():
            c0 = other.fitted_c[g]
            out = max(out, c / c0 if c0 > 0 else (math.inf if c > 0 else 0.0))
        return out

    def as_dict(self) -> dict:
        return {
            "order": self.order,
            "m": self.m,
            "L": self.L,
            "member": self.member,
            "fitted_c": {"".join(map(str, g)): c for g, c in self.fitted_c.items()},
        }


def decay_check(f: AnyField, l: int, m: int = 0, ceiling: float = DEFAULT_CEILING
                ) -> DecayProfile:
    """Fit ``c_gamma = max_{1<=|x|<=L/2} |D^gamma f| (1 + |x|^l)`` for ``|gamma| <= m``.

    Vector fields take the max over components.  ``member`` requires every
    ``c_gamma`` finite and at most ``ceiling``.
    """
    g = f.grid
    r = g.radius()
    region = (r >= 1.0) & (r <= g.L / 2)
    if not region.any():
        raise ValueError(f"fit region 1 <= |x| <= {g.L / 2} holds no grid nodes")
    weight = 1.0 + r[region] ** l
    vals = f.data
    cs = {}
    for gamma in multi_indices(g.D, m):
        d = spectral_derivative(vals, g, gamma) if sum(gamma) else vals
        d = np.abs(d)
        if d.ndim > g.D:
            d = d.max(axis=tuple(range(d.ndim - g.D)))
        cs[tuple(gamma)] = float(np.max(d[region] * weight))
    member = all(math.isfinite(c) and c <= ceiling for c in cs.values())
    return DecayProfile(l, m, cs, member, g.L, ceiling, (1.0, g.L / 2))


@dataclass
class InheritanceReport:
    initial: DecayProfile
    windows: list
    times: list

    @property
    def all_member(self) -> bool:
        return all(p.member for p in self.windows)

    @property
    def growth(self) -> float:
        """Largest per-multi-index ``c / c_initial`` over windows."""
        return max(p.ratio_to(self.initial) for p in self.windows)

    @property
    def monotone(self) -> bool:
        c = [self.initial.c_max] + [p.c_max for p in self.windows]
        return all(b <= a for a, b in zip(c, c[1:])) or all(b >= a for a, b in zip(c, c[1:]))


def decay_inheritance_probe(data: VectorField, m: int, windows: int, params: SchemeParams,
                            order: Optional[int] = None, ceiling: float = DEFAULT_CEILING
                            ) -> InheritanceReport:
    """Solve ``windows`` windows and decay-check every window end.

    The data must pass at order ``m(D+1)``.  Window ends are checked at
    ``order``, by default the inherited order ``m(D+1) - 1``.
    """
    D = data.grid.D
    full = m * (D + 1)
    pre = decay_check(data, full, m, ceiling)
    if not pre.member:
        raise ValueError(f"data is not in the decay class of order {full}")
    if order is None:
        order = full - 1
    traj = solve_global(data, params, windows)
    initial = decay_check(data, order, m, ceiling)
    profiles = [decay_check(traj.state(k), order, m, ceiling) for k in range(1, windows + 1)]
    return InheritanceReport(initial, profiles, list(traj.times[1:]))


@dataclass(frozen=True)
class CompactField:
    """Samples of ``f(tan y)`` on a tensor grid in ``(-pi/2, pi/2)^D``."""

    y: tuple
    values: np.ndarray

    @property
    def sup(self) -> float:
        v = self.values
        if v.ndim > len(self.y):
            v = np.sqrt(np.sum(v * v, axis=0))
        return float(np.max(np.abs(v)))

    def boundary_layer_sup(self, y0: float) -> float:
        """``sup |f|`` over samples with some ``|y_j| >= y0``."""
        D = len(self.y)
        mesh = np.meshgrid(*self.y, indexing="ij")
        outer = np.zeros(mesh[0].shape, dtype=bool)
        for yj in mesh:
            outer |= np.abs(yj) >= y0
        v = np.abs(self.values)
        if v.ndim > D:
            v = v.max(axis=tuple(range(v.ndim - D)))
        return float(v[outer].max()) if outer.any() else 0.0


def compactify(f: AnyField, n: Optional[int] = None) -> CompactField:
    """Arctan compactification ``y_j = arctan(x_j)``.

    With ``n=None`` the grid nodes are mapped exactly, so samples and sup
    norm are unchanged.  With ``n`` given, values are interpolated onto the
    uniform cell-centred ``y`` grid of ``n`` points per axis; points whose
    ``tan y`` leaves the box get 0.
    """
    g = f.grid
    x = g.axis()
    vals = f.data
    if n is None:
        return CompactField(tuple(np.arctan(x) for _ in range(g.D)), vals.copy())
    # close the periodic box so the interpolant covers [-L/2, L/2]
    xc = np.append(x, g.L / 2)
    lead = vals.ndim - g.D
    closed = vals
    for ax in range(g.D):
        a = lead + ax
        closed = np.concatenate([closed, np.take(closed, [0], axis=a)], axis=a)
    y = -np.pi / 2 + (np.arange(n) + 0.5) * np.pi / n
    t = np.tan(y)
    mesh = np.meshgrid(*([t] * g.D), indexing="ij")
    pts = np.stack([mm.ravel() for mm in mesh], axis=-1)
    inside = np.all(np.abs(pts) <= g.L / 2, axis=-1)
    comps = closed.reshape((-1,) + closed.shape[lead:])
    out = np.zeros((comps.shape[0], pts.shape[0]))
    for c in range(comps.shape[0]):
        interp = RegularGridInterpolator((xc,) * g.D, comps[c])
        out[c, inside] = interp(pts[inside])
    out = out.reshape(vals.shape[:lead] + (n,) * g.D)
    return CompactField(tuple(y for _ in range(g.D)), out)


@dataclass
class LimitDiagnostics:
    nu: list
    distances: np.ndarray
    cauchy: bool
    tol: float
    sups: list = field(default_factory=list)

    @property
    def consecutive(self) -> np.ndarray:
        d = self.distances
        return np.array([d[i, i + 1] for i in range(len(self.nu) - 1)])

    def as_dict(self) -> dict:
        return {
            "nu": [float(v) for v in self.nu],
            "distances": self.distances.tolist(),
            "cauchy": bool(self.cauchy),
        }


class LimitDiagnosticsError(SolverError):
    """A solve in the viscosity sequence failed; ``partial`` holds what was done."""

    def __init__(self, msg: str, partial: LimitDiagnostics):
        super().__init__(msg)
        self.partial = partial


def _cauchy(d: np.ndarray, tol: float, tail: int = 3) -> bool:
    cons = np.array([d[i, i + 1] for i in range(d.shape[0] - 1)])[-tail:]
    if not np.all(np.isfinite(cons)):
        return False
    return bool(np.all(cons < tol) and np.all(np.diff(cons) < 0))


def viscosity_sequence_diag(data: VectorField, nu_sequence: Sequence[float], horizon: float,
                            params: SchemeParams, tol: float = 1e-2,
                            nonlinear: Optional[bool] = None) -> LimitDiagnostics:
    """Solve to ``horizon`` for each viscosity and compare compactified final states.

    The window length is ``params.dt``, shortened so that an integer number
    of windows reaches ``horizon``.  ``cauchy`` is set when the last three
    consecutive distances ``d(nu_p, nu_{p+1})`` are below ``tol`` and
    strictly decreasing.
    """
    nus = [float(v) for v in nu_sequence]
    if len(nus) < 3:
        raise ValueError("need at least three viscosities")
    if any(b >= a for a, b in zip(nus, nus[1:])) or nus[-1] < 0:
        raise ValueError("viscosities must be strictly decreasing and non-negative")
    n_win = max(1, math.ceil(horizon / params.dt - 1e-12))
    base = params.replace(dt=horizon / n_win)
    if nonlinear is not None:
        base = base.replace(nonlinear=nonlinear)
    n = len(nus)
    d = np.full((n, n), np.nan)
    finals = []
    for i, nu in enumerate(nus):
        try:
            traj = solve_global(data, base.replace(nu=nu), n_win)
        except SolverError as exc:
            partial = LimitDiagnostics(nus, d, False, tol, [c.sup for c in finals])
            raise LimitDiagnosticsError(f"solve at nu={nu} failed: {exc}", partial) from exc
        finals.append(compactify(traj.final))
        d[i, i] = 0.0
        for j in range(i):
            diff = finals[i].values - finals[j].values
            d[i, j] = d[j, i] = float(np.max(np.abs(diff)))
    return LimitDiagnostics(nus, d, _cauchy(d, tol), tol, [c.sup for c in finals])


__all__ = [
    "DecayProfile",
    "decay_check",
    "InheritanceReport",
    "decay_inheritance_probe",
    "CompactField",
    "compactify",
    "LimitDiagnostics",
    "LimitDiagnosticsError",
    "viscosity_sequence_diag",
]
