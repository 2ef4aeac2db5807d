"""Periodic grids, sampled fields, spectral transforms and norms.

Fields live on the periodic box ``[-L/2, L/2)^D`` sampled at ``N`` points per
axis.  The physical representation stores node values; the spectral
representation stores Fourier-series amplitudes ``fftn(f) / N**D`` in numpy's
standard ordering.  With cell-volume weights ``(L/N)**D`` in physical space and
weight ``L**D`` on squared amplitudes, Parseval holds exactly.

Internally the heavy lifting uses real transforms (``rfftn``) on arrays whose
trailing ``D`` axes are the grid axes, so that whole time paths and vector
fields are transformed in one call.
"""

from __future__ import annotations

import functools
import itertools
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
import scipy.fft as sfft
from scipy.spatial.distance import pdist

PHYSICAL = "physical"
SPECTRAL = "spectral"
_REPR_CODES = {PHYSICAL: 0, SPECTRAL: 1}

MAGIC = b"LERAYFLOW\0FIELD\0"
DEFAULT_MAX_POINTS = 2**24


class GridError(ValueError):
    """Raised for grids that violate the resolution or memory rules."""


class SingularDataError(ValueError):
    """Raised when singular-data parameters fall outside the admissible set."""


# --------------------------------------------------------------------------
# threading

def fft_workers() -> int:
    """Worker count for FFTs, capped by ``LERAYFLOW_THREADS`` when set."""
    raw = os.environ.get("LERAYFLOW_THREADS")
    if raw is None or raw.strip() == "":
        return 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"LERAYFLOW_THREADS must be an integer, got {raw!r}") from exc
    return max(1, n)


# --------------------------------------------------------------------------
# grid

def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on ``[-L/2, L/2)^D``.

    Parameters
    ----------
    D : int
        Spatial dimension, 2 or 3.
    N : int
        Points per axis; a power of two, at least 4.
    L : float
        Box side length.
    max_points : int
        Memory budget expressed as the largest admissible ``N**D``.
    """

    D: int
    N: int
    L: float = 2 * math.pi
    max_points: int = DEFAULT_MAX_POINTS

    def __post_init__(self):
        if self.D not in (2, 3):
            raise GridError(f"dimension must be 2 or 3, got {self.D}")
        if not isinstance(self.N, (int, np.integer)) or not _is_power_of_two(int(self.N)) or self.N < 4:
            raise GridError(f"N must be a power of two >= 4, got {self.N}")
        if not (self.L > 0 and math.isfinite(self.L)):
            raise GridError(f"box length must be positive and finite, got {self.L}")
        if self.N**self.D > self.max_points:
            raise GridError(
                f"N^D = {self.N**self.D} exceeds the memory budget of {self.max_points} points"
            )

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.D

    @property
    def cell_volume(self) -> float:
        return self.h**self.D

    @property
    def axes(self) -> tuple:
        return tuple(range(-self.D, 0))

    def axis(self) -> np.ndarray:
        """1-D node coordinates ``-L/2 + j h``."""
        return -self.L / 2 + self.h * np.arange(self.N)

    def coords(self) -> list:
        """Dense coordinate arrays, one per axis."""
        return list(_coords(self))

    def radius(self) -> np.ndarray:
        return _radius(self)

    def origin_index(self) -> tuple:
        return (self.N // 2,) * self.D

    def with_length(self, L: float) -> "Grid":
        return Grid(self.D, self.N, L, self.max_points)


@functools.lru_cache(maxsize=32)
def _coords(grid: Grid) -> tuple:
    x = grid.axis()
    out = np.meshgrid(*([x] * grid.D), indexing="ij")
    for a in out:
        a.setflags(write=False)
    return tuple(out)


@functools.lru_cache(maxsize=32)
def _radius(grid: Grid) -> np.ndarray:
    r = np.sqrt(sum(c * c for c in _coords(grid)))
    r.setflags(write=False)
    return r


# --------------------------------------------------------------------------
# spectral helpers on the rfft layout

def rfft(values: np.ndarray, grid: Grid) -> np.ndarray:
    return sfft.rfftn(values, axes=grid.axes, workers=fft_workers())


def irfft(values_hat: np.ndarray, grid: Grid) -> np.ndarray:
    return sfft.irfftn(values_hat, s=grid.shape, axes=grid.axes, workers=fft_workers())


@functools.lru_cache(maxsize=32)
def wavenumbers(grid: Grid, real: bool = True, zero_nyquist: bool = False) -> tuple:
    """Broadcastable angular wavenumbers ``2 pi n / L`` per axis.

    ``real`` selects the ``rfftn`` layout (half spectrum along the last
    axis).  ``zero_nyquist`` sets the Nyquist entry to zero, the convention
    used for odd-order derivatives of real fields.
    """
    D, N = grid.D, grid.N
    out = []
    for d in range(D):
        if real and d == D - 1:
            n = np.arange(N // 2 + 1, dtype=float)
        else:
            n = sfft.fftfreq(N, 1.0 / N)
        if zero_nyquist:
            n = np.where(np.abs(n) == N // 2, 0.0, n)
        k = 2 * math.pi * n / grid.L
        shp = [1] * D
        shp[d] = k.size
        k = k.reshape(shp)
        k.setflags(write=False)
        out.append(k)
    return tuple(out)


@functools.lru_cache(maxsize=32)
def k_squared(grid: Grid, real: bool = True) -> np.ndarray:
    ks = wavenumbers(grid, real)
    k2 = sum(k * k for k in ks)
    k2 = np.broadcast_to(k2, _spectral_shape(grid, real)).copy()
    k2.setflags(write=False)
    return k2


@functools.lru_cache(maxsize=32)
def inverse_laplacian_symbol(grid: Grid, real: bool = True) -> np.ndarray:
    """``-1/|k|^2`` with the zero mode set to zero."""
    k2 = k_squared(grid, real)
    out = np.zeros_like(k2)
    nz = k2 > 0
    out[nz] = -1.0 / k2[nz]
    out.setflags(write=False)
    return out


@functools.lru_cache(maxsize=32)
def dealias_mask(grid: Grid, real: bool = True) -> np.ndarray:
    """Two-thirds truncation: keep ``|n_d| <= (N-1)//3`` on every axis."""
    D, N = grid.D, grid.N
    cut = (N - 1) // 3
    mask = np.ones(_spectral_shape(grid, real), dtype=bool)
    for d in range(D):
        if real and d == D - 1:
            n = np.arange(N // 2 + 1)
        else:
            n = np.rint(sfft.fftfreq(N, 1.0 / N)).astype(int)
        shp = [1] * D
        shp[d] = n.size
        mask &= (np.abs(n) <= cut).reshape(shp)
    mask.setflags(write=False)
    return mask


def _spectral_shape(grid: Grid, real: bool) -> tuple:
    if real:
        return (grid.N,) * (grid.D - 1) + (grid.N // 2 + 1,)
    return grid.shape


def derivative_symbol(grid: Grid, beta: Sequence[int], real: bool = True) -> np.ndarray:
    """Fourier multiplier of ``D^beta``; odd orders drop the Nyquist mode."""
    if len(beta) != grid.D:
        raise ValueError(f"multi-index {tuple(beta)} has wrong length for D={grid.D}")
    sym = np.ones(_spectral_shape(grid, real), dtype=complex)
    for d, b in enumerate(beta):
        if b < 0:
            raise ValueError("negative derivative order")
        if b == 0:
            continue
        k = wavenumbers(grid, real, zero_nyquist=bool(b % 2))[d]
        sym = sym * (1j * k) ** b
    return sym


def multi_indices(D: int, m: int) -> list:
    """All multi-indices ``beta`` in ``N^D`` with ``|beta| <= m``, sorted by order."""
    out = [b for b in itertools.product(range(m + 1), repeat=D) if sum(b) <= m]
    out.sort(key=lambda b: (sum(b), tuple(-x for x in b)))
    return out


def spectral_derivative(values: np.ndarray, grid: Grid, beta: Sequence[int]) -> np.ndarray:
    """``D^beta`` of real arrays whose trailing axes are the grid."""
    if sum(beta) == 0:
        return np.array(values, dtype=float)
    return irfft(rfft(values, grid) * derivative_symbol(grid, beta), grid)


def l2_array(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Discrete L2 norm over the trailing grid axes."""
    return np.sqrt(np.sum(values * values, axis=grid.axes) * grid.cell_volume)


def sup_array(values: np.ndarray, grid: Grid) -> np.ndarray:
    return np.max(np.abs(values), axis=grid.axes)


def hm_cm_array(values: np.ndarray, grid: Grid, m: int) -> np.ndarray:
    """``sum_{|beta|<=m} (|D^beta f|_L2 + |D^beta f|_sup)`` over leading axes."""
    total = l2_array(values, grid) + sup_array(values, grid)
    if m == 0:
        return total
    vh = rfft(values, grid)
    for beta in multi_indices(grid.D, m)[1:]:
        d = irfft(vh * derivative_symbol(grid, beta), grid)
        total = total + l2_array(d, grid) + sup_array(d, grid)
    return total


# --------------------------------------------------------------------------
# fields

def _readonly(a: np.ndarray) -> np.ndarray:
    v = a.view()
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class Field:
    """Scalar field sampled on a grid."""

    grid: Grid
    values: np.ndarray
    representation: str = PHYSICAL

    def __post_init__(self):
        if self.representation not in _REPR_CODES:
            raise ValueError(f"unknown representation {self.representation!r}")
        dtype = float if self.representation == PHYSICAL else complex
        vals = np.asarray(self.values, dtype=dtype)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values shape {vals.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", _readonly(vals))

    def to_spectral(self) -> "Field":
        if self.representation == SPECTRAL:
            return self
        if not np.all(np.isfinite(self.values)):
            raise ValueError("cannot transform non-finite values")
        amp = sfft.fftn(self.values, workers=fft_workers()) / self.grid.N**self.grid.D
        return Field(self.grid, amp, SPECTRAL)

    def to_physical(self) -> "Field":
        if self.representation == PHYSICAL:
            return self
        vals = sfft.ifftn(self.values * self.grid.N**self.grid.D, workers=fft_workers())
        return Field(self.grid, vals.real, PHYSICAL)

    @property
    def data(self) -> np.ndarray:
        """Physical node values."""
        return self.to_physical().values


@dataclass(frozen=True)
class VectorField:
    """Vector field with components stacked along the leading axis."""

    grid: Grid
    values: np.ndarray
    representation: str = PHYSICAL

    def __post_init__(self):
        if self.representation not in _REPR_CODES:
            raise ValueError(f"unknown representation {self.representation!r}")
        dtype = float if self.representation == PHYSICAL else complex
        vals = np.asarray(self.values, dtype=dtype)
        if vals.shape != (self.grid.D,) + self.grid.shape:
            raise ValueError(
                f"values shape {vals.shape} does not match {(self.grid.D,) + self.grid.shape}"
            )
        object.__setattr__(self, "values", _readonly(vals))

    @classmethod
    def from_components(cls, comps: Sequence[Field]) -> "VectorField":
        grid = comps[0].grid
        return cls(grid, np.stack([c.data for c in comps]))

    @property
    def components(self) -> list:
        return [Field(self.grid, c, self.representation) for c in self.values]

    def to_spectral(self) -> "VectorField":
        if self.representation == SPECTRAL:
            return self
        if not np.all(np.isfinite(self.values)):
            raise ValueError("cannot transform non-finite values")
        amp = sfft.fftn(self.values, axes=self.grid.axes, workers=fft_workers())
        return VectorField(self.grid, amp / self.grid.N**self.grid.D, SPECTRAL)

    def to_physical(self) -> "VectorField":
        if self.representation == PHYSICAL:
            return self
        vals = sfft.ifftn(self.values * self.grid.N**self.grid.D, axes=self.grid.axes,
                          workers=fft_workers())
        return VectorField(self.grid, vals.real, PHYSICAL)

    @property
    def data(self) -> np.ndarray:
        return self.to_physical().values


AnyField = Union[Field, VectorField]


def to_spectral(f: AnyField) -> AnyField:
    return f.to_spectral()


def to_physical(f: AnyField) -> AnyField:
    return f.to_physical()


def like(f: AnyField, values: np.ndarray) -> AnyField:
    """Physical field of the same kind and grid as ``f``."""
    return type(f)(f.grid, values)


def derivative(f: AnyField, beta, order: int = 1) -> AnyField:
    """Spectral derivative ``D^beta f``, returned in the physical representation.

    ``beta`` is a multi-index, or an axis number combined with ``order``.
    """
    if isinstance(beta, (int, np.integer)):
        if not 0 <= beta < f.grid.D:
            raise ValueError(f"axis {beta} out of range for D={f.grid.D}")
        if order < 1:
            raise ValueError("order must be at least 1")
        beta = tuple(order if d == beta else 0 for d in range(f.grid.D))
    beta = tuple(int(b) for b in beta)
    if len(beta) != f.grid.D:
        raise ValueError(f"multi-index {beta} has wrong length for D={f.grid.D}")
    return like(f, spectral_derivative(f.data, f.grid, beta))


# --------------------------------------------------------------------------
# norms

@dataclass(frozen=True)
class NormReport:
    """L2, sup and ``H^m cap C^m`` norms of a field."""

    l2: float
    sup: float
    hm_cm: float
    m: int


def norms(f: AnyField, m: int = 0) -> NormReport:
    """Norms of a scalar field, or the componentwise maximum for vectors."""
    if m < 0:
        raise ValueError("m must be non-negative")
    if isinstance(f, VectorField):
        vals = f.data
        return NormReport(
            l2=float(l2_array(vals, f.grid).max()),
            sup=float(sup_array(vals, f.grid).max()),
            hm_cm=float(hm_cm_array(vals, f.grid, m).max()),
            m=m,
        )
    if f.representation == SPECTRAL:
        l2 = math.sqrt(f.grid.L**f.grid.D * float(np.sum(np.abs(f.values) ** 2)))
    else:
        l2 = float(l2_array(f.values, f.grid))
    vals = f.data
    return NormReport(
        l2=l2,
        sup=float(sup_array(vals, f.grid)),
        hm_cm=float(hm_cm_array(vals, f.grid, m)),
        m=m,
    )


# --------------------------------------------------------------------------
# data families

def _smooth_bump(r: np.ndarray, radius: float) -> np.ndarray:
    """``exp(1 - 1/(1 - (r/R)^2))`` inside the ball, zero outside; value 1 at 0."""
    s = r / radius
    out = np.zeros_like(r)
    inside = s < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def _shifted(grid: Grid, center) -> list:
    c = np.zeros(grid.D) if center is None else np.asarray(center, dtype=float)
    return [x - c[d] for d, x in enumerate(grid.coords())]


def _constant(grid, value=1.0):
    return np.full(grid.shape, float(value))


def _sine(grid, mode=None, amplitude=1.0):
    mode = (1,) + (0,) * (grid.D - 1) if mode is None else tuple(mode)
    phase = sum(2 * math.pi * n * x / grid.L for n, x in zip(mode, grid.coords()))
    return amplitude * np.sin(phase)


def _cosine(grid, mode=None, amplitude=1.0):
    mode = (1,) + (0,) * (grid.D - 1) if mode is None else tuple(mode)
    phase = sum(2 * math.pi * n * x / grid.L for n, x in zip(mode, grid.coords()))
    return amplitude * np.cos(phase)


def _gaussian(grid, amplitude=1.0, width=1.0, center=None):
    X = _shifted(grid, center)
    return amplitude * np.exp(-sum(x * x for x in X) / (2 * width**2))


def _rational(grid, power=2.0, amplitude=1.0):
    return amplitude / (1.0 + grid.radius() ** power)


def _compact_bump(grid, radius=2.0, amplitude=1.0, center=None):
    X = _shifted(grid, center)
    return amplitude * _smooth_bump(np.sqrt(sum(x * x for x in X)), radius)


def _white_noise(grid, seed=0, scale=1.0):
    return scale * np.random.default_rng(seed).standard_normal(grid.shape)


def _taylor_green(grid, amplitude=1.0):
    k = 2 * math.pi / grid.L
    X = grid.coords()
    if grid.D == 2:
        x, y = X
        return amplitude * np.stack([np.sin(k * x) * np.cos(k * y), -np.cos(k * x) * np.sin(k * y)])
    x, y, z = X
    return amplitude * np.stack([
        np.sin(k * x) * np.cos(k * y) * np.cos(k * z),
        -np.cos(k * x) * np.sin(k * y) * np.cos(k * z),
        np.zeros(grid.shape),
    ])


def _curl_potential(grid: Grid, potential: np.ndarray) -> np.ndarray:
    """Divergence-free field from a potential: curl in 3-D, rotated gradient in 2-D."""
    ph = rfft(potential, grid)
    ks = wavenumbers(grid, True, zero_nyquist=True)
    if grid.D == 2:
        out = np.stack([irfft(1j * ks[1] * ph, grid), irfft(-1j * ks[0] * ph, grid)])
        return out
    a = ph
    return np.stack([
        irfft(1j * (ks[1] * a[2] - ks[2] * a[1]), grid),
        irfft(1j * (ks[2] * a[0] - ks[0] * a[2]), grid),
        irfft(1j * (ks[0] * a[1] - ks[1] * a[0]), grid),
    ])


def _random_solenoidal(grid, seed=0, amplitude=1.0, envelope=1.0):
    """Curl of a random potential with Gaussian spectral envelope ``exp(-|n|^2/(2 e^2))``."""
    rng = np.random.default_rng(seed)
    ncomp = 1 if grid.D == 2 else 3
    pot = rng.standard_normal((ncomp,) + grid.shape)
    ks = wavenumbers(grid, True)
    n2 = sum((k * grid.L / (2 * math.pi)) ** 2 for k in ks)
    env = np.exp(-n2 / (2 * envelope**2))
    ph = rfft(pot, grid) * env
    ph[(slice(None),) + (0,) * grid.D] = 0.0
    pot = irfft(ph, grid)
    out = _curl_potential(grid, pot[0] if grid.D == 2 else pot)
    scale = np.max(np.abs(out))
    return amplitude * out / scale if scale > 0 else out


def _curl_bump(grid, radius=2.0, amplitude=1.0, center=None):
    """Compactly supported divergence-free field: curl of bump times a fixed vector."""
    b = _compact_bump(grid, radius, 1.0, center)
    if grid.D == 2:
        out = _curl_potential(grid, b)
    else:
        out = _curl_potential(grid, np.stack([b, -0.5 * b, 0.25 * b]))
    scale = np.max(np.abs(out))
    return amplitude * out / scale if scale > 0 else out


SCALAR_FAMILIES = {
    "constant": _constant,
    "sine": _sine,
    "cosine": _cosine,
    "gaussian": _gaussian,
    "rational": _rational,
    "compact_bump": _compact_bump,
    "white_noise": _white_noise,
}

VECTOR_FAMILIES = {
    "taylor_green": _taylor_green,
    "random_solenoidal": _random_solenoidal,
    "curl_bump": _curl_bump,
}


def make_field(grid: Grid, family: str, **params) -> AnyField:
    """Sample a registered data family on ``grid``.

    Scalar families return a :class:`Field`, vector families a
    :class:`VectorField`.
    """
    if family in SCALAR_FAMILIES:
        return Field(grid, SCALAR_FAMILIES[family](grid, **params))
    if family in VECTOR_FAMILIES:
        return VectorField(grid, VECTOR_FAMILIES[family](grid, **params))
    known = sorted(SCALAR_FAMILIES) + sorted(VECTOR_FAMILIES)
    raise KeyError(f"unknown data family {family!r}; known: {', '.join(known)}")


# --------------------------------------------------------------------------
# singular data

def cutoff_bridge(r: np.ndarray) -> np.ndarray:
    """Cutoff equal to 1 on ``r <= 1`` and 0 on ``r >= 2``.

    The bridge is the quintic smoothstep ``1 - s^3 (10 - 15 s + 6 s^2)`` with
    ``s = r - 1``; first and second derivatives vanish at both ends.
    """
    r = np.asarray(r, dtype=float)
    s = np.clip(r - 1.0, 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


@dataclass(frozen=True)
class SingularDataSpec:
    """Parameters of the oscillating radial profile ``phi(r) r^beta0 sin(r^-alpha0)``.

    ``i0`` is the component carrying the singular profile; the other
    components receive ``regular_amplitude`` times a smooth compact bump of
    radius 2.
    """

    alpha0: float
    beta0: float
    i0: int = 0
    regular_amplitude: float = 0.5
    margin: float = 1e-12

    def violations(self, D: int = 3) -> list:
        a, b = self.alpha0, self.beta0
        out = []
        if not (0.0 < a < 0.5):
            out.append("alpha0 in (0, 1/2)")
        if not (1.0 < b < 1.0 + a):
            out.append("beta0 in (1, 1 + alpha0)")
        if not (b - 2.0 - 2.0 * a > -D / 2.0 + self.margin):
            out.append(f"H2 at the origin: beta0 - 2 - 2*alpha0 > {-D / 2:g}")
        if not (0 <= self.i0 < D):
            out.append(f"component index i0 in [0, {D})")
        return out

    def validate(self, D: int = 3) -> "SingularDataSpec":
        bad = self.violations(D)
        if bad:
            raise SingularDataError("singular data rejected: " + "; ".join(bad))
        return self


def singular_profile(r: np.ndarray, alpha0: float, beta0: float) -> np.ndarray:
    """``phi(r) r^beta0 sin(r^-alpha0)`` with the value 0 at ``r = 0``."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    nz = r > 0
    rn = r[nz]
    out[nz] = cutoff_bridge(rn) * rn**beta0 * np.sin(rn ** (-alpha0))
    return out


def make_singular_data(grid: Grid, spec: SingularDataSpec) -> VectorField:
    """Velocity data whose ``i0`` component is the singular radial profile."""
    spec.validate(grid.D)
    r = grid.radius()
    comps = []
    for j in range(grid.D):
        if j == spec.i0:
            comps.append(singular_profile(r, spec.alpha0, spec.beta0))
        else:
            comps.append(spec.regular_amplitude * _smooth_bump(r, 2.0))
    return VectorField(grid, np.stack(comps))


# --------------------------------------------------------------------------
# Hoelder modulus

def _stencil_offsets(D: int, s: int) -> list:
    offs = []
    for o in itertools.product(range(-s, s + 1), repeat=D):
        first = next((c for c in o if c != 0), 0)
        if first > 0:
            offs.append(o)
    return offs


def _shift_pair(values: np.ndarray, off: Sequence[int]):
    """Views ``(f[x], f[x + off])`` over nodes where both lie in the box (no wrap)."""
    a_idx, b_idx = [], []
    for o in off:
        if o >= 0:
            a_idx.append(slice(0, values.shape[len(a_idx)] - o))
            b_idx.append(slice(o, None))
        else:
            a_idx.append(slice(-o, None))
            b_idx.append(slice(0, values.shape[len(b_idx)] + o))
    return values[tuple(a_idx)], values[tuple(b_idx)]


def holder_modulus(f: AnyField, delta: float, stencil: int = 2, coarse: int = 16,
                   exclude_origin: bool = False) -> float:
    """Estimate ``sup |f(x) - f(y)| / |x - y|^delta`` from node pairs.

    Pair policy: every pair whose index offset lies in ``[-stencil, stencil]^D``
    (no periodic wrap), plus every pair of nodes on the sub-lattice with stride
    ``N // coarse``.  Both sets are nested under grid refinement, so estimates
    at different ``N`` are comparable.  Vector fields take the componentwise
    maximum.  ``exclude_origin`` drops the node at ``x = 0``.
    """
    if not (0 < delta <= 1):
        raise ValueError("delta must lie in (0, 1]")
    grid = f.grid
    vals = f.data
    comps = vals if isinstance(f, VectorField) else vals[None]
    valid = np.ones(grid.shape, dtype=bool)
    if exclude_origin:
        valid[grid.origin_index()] = False
    best = 0.0
    h = grid.h
    for off in _stencil_offsets(grid.D, stencil):
        dist = h * math.sqrt(sum(o * o for o in off))
        va, vb = _shift_pair(valid, off)
        ok = va & vb
        for c in comps:
            a, b = _shift_pair(c, off)
            diff = np.abs(a - b)[ok]
            if diff.size:
                best = max(best, float(diff.max()) / dist**delta)
    stride = max(1, grid.N // coarse)
    sub = tuple(slice(0, None, stride) for _ in range(grid.D))
    pts = np.stack([x[sub].ravel() for x in grid.coords()], axis=1)
    keep = valid[sub].ravel()
    pts = pts[keep]
    for c in comps:
        v = c[sub].ravel()[keep]
        best = max(best, _dense_pairs(pts, v, delta))
    return best


def _dense_pairs(pts: np.ndarray, v: np.ndarray, delta: float) -> float:
    if len(v) < 2:
        return 0.0
    d = pdist(pts)
    dv = pdist(v[:, None], "cityblock")
    return float(np.max(dv / d**delta))


# --------------------------------------------------------------------------
# binary dumps

def dump_field(f: AnyField, path: Union[str, Path]) -> None:
    """Write a field in the little-endian binary layout.

    Header: 16-byte magic, u32 D, u32 N, f64 L, u8 representation
    (0 physical, 1 spectral).  Payload: f64 values in row-major order, complex
    amplitudes interleaved re/im, vector components one after another.
    """
    g = f.grid
    header = MAGIC + struct.pack("<IIdB", g.D, g.N, g.L, _REPR_CODES[f.representation])
    vals = np.ascontiguousarray(f.values)
    if f.representation == SPECTRAL:
        payload = vals.astype("<c16").view("<f8")
    else:
        payload = vals.astype("<f8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes(order="C"))


def load_field(path: Union[str, Path]) -> AnyField:
    """Read a field written by :func:`dump_field`."""
    raw = Path(path).read_bytes()
    if raw[:16] != MAGIC:
        raise ValueError(f"{path}: bad magic")
    D, N, L, code = struct.unpack("<IIdB", raw[16:33])
    rep = {v: k for k, v in _REPR_CODES.items()}.get(code)
    if rep is None:
        raise ValueError(f"{path}: unknown representation code {code}")
    grid = Grid(D, N, L)
    data = np.frombuffer(raw[33:], dtype="<f8")
    per = N**D * (2 if rep == SPECTRAL else 1)
    if data.size % per:
        raise ValueError(f"{path}: payload size {data.size} is not a multiple of {per}")
    ncomp = data.size // per
    if rep == SPECTRAL:
        data = data.view("<c16")
    data = data.astype(complex if rep == SPECTRAL else float)
    if ncomp == 1:
        return Field(grid, data.reshape(grid.shape), rep)
    if ncomp == D:
        return VectorField(grid, data.reshape((D,) + grid.shape), rep)
    raise ValueError(f"{path}: {ncomp} components do not match D={D}")


def field_bytes(f: AnyField) -> bytes:
    """Payload bytes of a field, used for bit-exact comparisons."""
    return np.ascontiguousarray(f.values).tobytes()


def iter_components(f: AnyField) -> Iterable[np.ndarray]:
    vals = f.data
    return iter(vals) if isinstance(f, VectorField) else iter([vals])
