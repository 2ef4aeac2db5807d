"""Leray projection, the Leray source term and Euler-Leray data functions.

For a velocity ``v`` the source term is

    S_i(v) = d_i Delta^{-1} ( sum_{m,j} d_j v_m  d_m v_j ),

which equals ``-d_i p`` for the pressure of the incompressible equations.
Two routes are offered: the Fourier multiplier ``i k_i (-1/|k|^2)`` and a
real-space quadrature against the periodic kernel gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .field_core import (
    AnyField,
    Field,
    Grid,
    VectorField,
    dealias_mask,
    derivative_symbol,
    holder_modulus,
    inverse_laplacian_symbol,
    irfft,
    multi_indices,
    rfft,
    spectral_derivative,
    wavenumbers,
)
from .kernels import periodic_grad_convolve

ROUTES = ("spectral", "kernel")


def project_hat(vh: np.ndarray, grid: Grid) -> np.ndarray:
    """Leray projection of rfft coefficients shaped ``(..., D, *spectral)``."""
    ks = wavenumbers(grid, True, zero_nyquist=True)
    k2 = sum(k * k for k in ks)
    inv = np.zeros_like(k2)
    nz = k2 > 0
    inv[nz] = 1.0 / k2[nz]
    ax = vh.ndim - grid.D - 1
    comps = [np.take(vh, i, axis=ax) for i in range(grid.D)]
    div = sum(ks[j] * comps[j] for j in range(grid.D)) * inv
    return np.stack([comps[i] - ks[i] * div for i in range(grid.D)], axis=ax)


def leray_project(v: VectorField):
    """Project onto divergence-free fields.

    Returns ``(Pv, q)`` with ``v = Pv + grad q`` and ``q`` of zero mean.  The
    zero mode of ``v`` is kept.
    """
    g = v.grid
    vh = rfft(v.data, g)
    ks = wavenumbers(g, True, zero_nyquist=True)
    div_h = sum(1j * ks[j] * vh[j] for j in range(g.D))
    # |k|^2 from the same Nyquist-free wavenumbers, so the operator is a projector
    k2 = sum(k * k for k in ks)
    inv = np.zeros_like(k2)
    inv[k2 > 0] = -1.0 / k2[k2 > 0]
    qh = inv * div_h
    out = np.stack([vh[i] - 1j * ks[i] * qh for i in range(g.D)])
    return VectorField(g, irfft(out, g)), Field(g, irfft(qh, g))


def divergence(v: VectorField) -> Field:
    g = v.grid
    vh = rfft(v.data, g)
    ks = wavenumbers(g, True, zero_nyquist=True)
    return Field(g, irfft(sum(1j * ks[j] * vh[j] for j in range(g.D)), g))


def gradient_tensor(values: np.ndarray, grid: Grid) -> np.ndarray:
    """``out[..., m, j, x] = d_j v_m`` for arrays shaped ``(..., D, *grid)``."""
    vh = rfft(values, grid)
    ks = wavenumbers(grid, True, zero_nyquist=True)
    ax = values.ndim - grid.D
    return np.stack([irfft(1j * ks[j] * vh, grid) for j in range(grid.D)], axis=ax)


def strain_product(values: np.ndarray, grid: Grid) -> np.ndarray:
    """``sum_{m,j} d_j v_m d_m v_j`` pointwise, for arrays shaped ``(..., D, *grid)``."""
    G = gradient_tensor(values, grid)
    ax = values.ndim - grid.D - 1
    return np.sum(G * np.swapaxes(G, ax, ax + 1), axis=(ax, ax + 1))


def grad_inverse_laplacian_hat(fh: np.ndarray, grid: Grid) -> np.ndarray:
    """rfft of ``d_i Delta^{-1} f`` for every ``i``, stacked on a new axis ``-D-1``."""
    ks = wavenumbers(grid, True, zero_nyquist=True)
    base = inverse_laplacian_symbol(grid) * fh
    return np.stack([1j * ks[i] * base for i in range(grid.D)], axis=fh.ndim - grid.D)


def leray_source(v: VectorField, route: str = "spectral", l: int = 0) -> VectorField:
    """Source ``sum_{|gamma|<=l} d_i Delta^{-1} D^gamma (sum v_{m,j} v_{j,m})``.

    The derivative product is formed pointwise from spectral derivatives in
    both routes; they differ only in how ``d_i Delta^{-1}`` is applied.
    The kernel route needs D = 3.
    """
    if route not in ROUTES:
        raise ValueError(f"unknown route {route!r}; expected one of {ROUTES}")
    if l < 0:
        raise ValueError("order l must be non-negative")
    g = v.grid
    if route == "kernel" and g.D != 3:
        raise ValueError("the kernel route is implemented for D = 3 only")
    fh = rfft(strain_product(v.data, g), g)
    if l > 0:
        fh = fh * sum(derivative_symbol(g, gm) for gm in multi_indices(g.D, l))
    if route == "spectral":
        out = irfft(grad_inverse_laplacian_hat(fh, g), g)
    else:
        fh[(0,) * g.D] = 0.0
        f = irfft(fh, g)
        out = np.stack([periodic_grad_convolve(f, g, i) for i in range(g.D)])
    return VectorField(g, out)


def top_mode_fraction(values: np.ndarray, grid: Grid) -> float:
    """Energy fraction in modes with some ``|n_d|`` above two thirds of Nyquist."""
    e = np.abs(rfft(values, grid)) ** 2
    mask = dealias_mask(grid)
    total = float(np.sum(e))
    return 0.0 if total == 0 else float(np.sum(e * ~mask)) / total


def smoothness_budget(f: AnyField, m_max: int = 8, tol: float = 1e-6) -> int:
    """Largest ``m <= m_max`` such that every derivative of order ``<= m`` is resolved.

    A derivative counts as resolved when its energy fraction above two thirds
    of Nyquist is below ``tol``.
    """
    g = f.grid
    vals = f.data
    budget = -1
    for m in range(m_max + 1):
        ok = all(top_mode_fraction(spectral_derivative(vals, g, b), g) < tol
                 for b in multi_indices(g.D, m) if sum(b) == m)
        if not ok:
            break
        budget = m
    return budget


def euler_leray_fn(g: VectorField, l: int, kind: int = 1, strict: bool = False) -> VectorField:
    """Euler-Leray data function of order ``l``.

    ``kind=1``: ``sum_{|gamma|<=l} [ D^gamma sum_j g_j g_{i,j}
    + d_i Delta^{-1} D^gamma sum_{m,j} g_{m,j} g_{j,m} ]``.

    ``kind=0``: ``sum_{|gamma|<=l} [ D^gamma sum_j g_j g_i
    + Delta^{-1} D^gamma sum_{m,j} g_{m,j} g_{j,m} ]``.

    With ``strict=True`` data whose smoothness budget is below ``l + 1`` is
    rejected.
    """
    if kind not in (0, 1):
        raise ValueError("kind must be 0 or 1")
    if l < 0:
        raise ValueError("order l must be non-negative")
    if strict and smoothness_budget(g, l + 1) < l + 1:
        raise ValueError(f"data does not resolve {l + 1} derivatives")
    grid = g.grid
    D = grid.D
    vals = g.data
    gammas = multi_indices(D, l)
    sym_sum = sum(derivative_symbol(grid, gm) for gm in gammas)
    Gt = gradient_tensor(vals, grid)
    prod = np.einsum("mj...,jm...->...", Gt, Gt)
    ph = rfft(prod, grid) * sym_sum
    inv = inverse_laplacian_symbol(grid)
    ks = wavenumbers(grid, True, zero_nyquist=True)
    out = np.empty_like(vals)
    for i in range(D):
        if kind == 1:
            burg = sum(vals[j] * Gt[i, j] for j in range(D))
            lsrc = 1j * ks[i] * inv * ph
        else:
            burg = sum(vals[j] * vals[i] for j in range(D))
            lsrc = inv * ph
        out[i] = irfft(rfft(burg, grid) * sym_sum + lsrc, grid)
    return VectorField(grid, out)


@dataclass(frozen=True)
class ModulusEstimate:
    lipschitz: float
    holder: dict
    policy: str

    def __getitem__(self, delta: float) -> float:
        return self.lipschitz if delta == 1 else self.holder[delta]


def estimate_modulus(f: AnyField, deltas: Sequence[float] = (0.9,), **kw) -> ModulusEstimate:
    """Lipschitz constant and Hoelder constants for each exponent in ``deltas``."""
    stencil = kw.get("stencil", 2)
    coarse = kw.get("coarse", 16)
    policy = f"offsets in [-{stencil}, {stencil}]^D plus all pairs on the N//{coarse} sub-lattice"
    holder = {float(d): holder_modulus(f, d, **kw) for d in deltas if d != 1}
    return ModulusEstimate(holder_modulus(f, 1.0, **kw), holder, policy)


@dataclass(frozen=True)
class RefinementReport:
    resolutions: tuple
    values: tuple
    trend: str

    @property
    def growth(self) -> float:
        return self.values[-1] / self.values[0]

    @property
    def drift(self) -> float:
        v = np.asarray(self.values)
        return float((v.max() - v.min()) / v.min())


def refinement_trend(values: Sequence[float], stable_tol: float = 0.1) -> str:
    v = np.asarray(values, dtype=float)
    if (v.max() - v.min()) <= stable_tol * v.min():
        return "stable"
    if np.all(np.diff(v) > 0):
        return "growing"
    if np.all(np.diff(v) < 0):
        return "decaying"
    return "irregular"


def modulus_refinement(build: Callable[[int], AnyField], resolutions: Sequence[int],
                       delta: float, stable_tol: float = 0.1, **kw) -> RefinementReport:
    """Modulus estimates of ``build(N)`` over a refinement sweep."""
    vals = tuple(holder_modulus(build(N), delta, **kw) for N in resolutions)
    return RefinementReport(tuple(resolutions), vals, refinement_trend(vals, stable_tol))


__all__ = [
    "leray_project",
    "leray_source",
    "euler_leray_fn",
    "estimate_modulus",
    "ModulusEstimate",
    "smoothness_budget",
    "modulus_refinement",
    "divergence",
    "strain_product",
]

