"""Heat and Laplace kernels, heat convolution and kernel constants.

The heat kernel is ``G(t, y) = (4 pi kappa t)^(-D/2) exp(-|y|^2 / (4 kappa t))``
and the Laplace kernel ``K_D`` is normalised so that ``Delta K_D = delta``.
Convolution with ``G`` on the periodic box is the Fourier multiplier
``exp(-kappa t |k|^2)``.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate, optimize, special

from .field_core import (
    AnyField,
    Grid,
    VectorField,
    irfft,
    k_squared,
    like,
    rfft,
    wavenumbers,
)


# --------------------------------------------------------------------------
# pointwise heat kernel

@dataclass(frozen=True)
class GaussianSpec:
    """Scaled heat kernel parameters; the diffusivity is ``rho r^2 nu``."""

    nu: float
    rho: float = 1.0
    r: float = 1.0

    def __post_init__(self):
        if not (self.nu > 0 and self.rho > 0 and self.r > 0):
            raise ValueError("nu, rho and r must be positive")

    @property
    def kappa(self) -> float:
        return self.rho * self.r**2 * self.nu


def _check_time(t, kappa):
    if np.any(np.asarray(t) <= 0):
        raise ValueError("heat kernel needs t > 0")
    if kappa <= 0:
        raise ValueError("heat kernel needs kappa > 0")


def gaussian_eval(t, y, kappa: float) -> np.ndarray:
    """Heat kernel at times ``t`` and points ``y`` (last axis of length D)."""
    _check_time(t, kappa)
    y = np.asarray(y, dtype=float)
    D = y.shape[-1]
    s = 4.0 * kappa * np.asarray(t, dtype=float)
    r2 = np.sum(y * y, axis=-1)
    return (math.pi * s) ** (-D / 2) * np.exp(-r2 / s)


def gaussian_deriv_eval(t, y, i: int, kappa: float) -> np.ndarray:
    """``d/dy_i`` of the heat kernel, ``-(2 y_i / (4 kappa t)) G``."""
    y = np.asarray(y, dtype=float)
    s = 4.0 * kappa * np.asarray(t, dtype=float)
    return -(2.0 * y[..., i] / s) * gaussian_eval(t, y, kappa)


def reflect(y, i: int) -> np.ndarray:
    """Negate coordinate ``i``."""
    y = np.array(y, dtype=float, copy=True)
    y[..., i] = -y[..., i]
    return y


# --------------------------------------------------------------------------
# heat convolution on the box

def heat_multiplier(grid: Grid, t: float, kappa: float) -> np.ndarray:
    return np.exp(-(kappa * t) * k_squared(grid))


def _check_heat_args(t, kappa):
    if t < 0:
        raise ValueError("heat convolution needs t >= 0")
    if kappa < 0:
        raise ValueError("heat convolution needs kappa >= 0")


def heat_convolve(f: AnyField, t: float, kappa: float) -> AnyField:
    """``f * G(t)`` on the periodic box; the identity when ``kappa t = 0``."""
    _check_heat_args(t, kappa)
    if kappa * t == 0:
        return like(f, np.array(f.data))
    g = f.grid
    return like(f, irfft(rfft(f.data, g) * heat_multiplier(g, t, kappa), g))


def heat_deriv_convolve(f: AnyField, t: float, i: int, kappa: float) -> AnyField:
    """``f * d_i G(t)``, equal to ``d_i (f * G(t))``."""
    _check_heat_args(t, kappa)
    g = f.grid
    if not 0 <= i < g.D:
        raise ValueError(f"derivative index {i} out of range for D={g.D}")
    k = wavenumbers(g, True, zero_nyquist=True)[i]
    mult = 1j * k * heat_multiplier(g, t, kappa)
    return like(f, irfft(rfft(f.data, g) * mult, g))


def heat_tail_mass(D: int, t: float, kappa: float, radius: float) -> float:
    """Heat kernel mass outside the ball of ``radius``, ``Q(D/2, R^2/(4 kappa t))``.

    This is the size of the wrap-around error when a whole-space convolution
    is replaced by the periodic one on a box of half-width ``radius``.
    """
    _check_time(t, kappa)
    return float(special.gammaincc(D / 2, radius**2 / (4.0 * kappa * t)))


def lipschitz_heat_constant(D: int) -> float:
    """``E|Z| |Z_1|`` for a standard normal ``Z`` in ``R^D``.

    For an ``l``-Lipschitz ``f`` one has ``|f * G_i(s)| <= l E|Z||Z_1|`` for
    every ``s`` and ``kappa``.
    """
    return D * math.exp(special.gammaln(D / 2) - special.gammaln((D + 1) / 2)) / math.sqrt(math.pi)


def lipschitz_heat_bound(f: AnyField, window: float, kappa: float, delta: float,
                         lipschitz: Optional[float] = None, nodes: int = 16) -> tuple:
    """``(lhs, rhs)`` for ``int_0^window max_i sup|f * G_i(s)| ds <= l C window^(1-delta)``.

    ``lhs`` uses Gauss-Legendre quadrature in time; ``l`` defaults to the
    largest spectral first derivative of ``f``.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if not 0 < window <= 1:
        raise ValueError("window must lie in (0, 1]")
    g = f.grid
    if lipschitz is None:
        lipschitz = max(float(np.max(np.abs(heat_deriv_convolve(f, 0.0, i, kappa).data)))
                        for i in range(g.D))
    x, w = np.polynomial.legendre.leggauss(nodes)
    ts = 0.5 * window * (x + 1.0)
    vals = [max(float(np.max(np.abs(heat_deriv_convolve(f, t, i, kappa).data)))
                for i in range(g.D)) for t in ts]
    lhs = 0.5 * window * float(np.dot(w, vals))
    rhs = lipschitz * lipschitz_heat_constant(g.D) * window ** (1.0 - delta)
    return lhs, rhs


# --------------------------------------------------------------------------
# pointwise derivative bound

def gaussian_moment_sup(p: float) -> tuple:
    """Maximiser and maximum of ``z^p exp(-z^2)`` over ``z > 0``."""
    if p <= 0:
        raise ValueError("p must be positive")
    z = math.sqrt(p / 2.0)
    return z, z**p * math.exp(-z * z)


def pointwise_bound_constant(D: int, delta: float) -> float:
    """Constant ``C`` in ``|G_i(t, y)| <= C / ((4 kappa t)^delta |y|^(D+1-2 delta))``.

    With ``w = |y|^2 / (4 kappa t)`` the ratio of the two sides is
    ``2 pi^(-D/2) |y_i|/|y| w^(D/2+1-delta) exp(-w)``, so
    ``C = 2 pi^(-D/2) sup_z z^(2p) exp(-z^2)`` with ``p = D/2 + 1 - delta``.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    p = D / 2 + 1 - delta
    return 2.0 * math.pi ** (-D / 2) * gaussian_moment_sup(2 * p)[1]


def pointwise_literal_constant(D: int, delta: float) -> float:
    """Variant with ``sup_z z^p exp(-z^2)``; too small, kept for comparison."""
    p = D / 2 + 1 - delta
    return 2.0 * math.pi ** (-D / 2) * gaussian_moment_sup(p)[1]


@dataclass(frozen=True)
class BoundCheck:
    lhs: np.ndarray
    rhs: np.ndarray
    violations: int

    @property
    def ok(self) -> bool:
        return self.violations == 0

    @property
    def worst_ratio(self) -> float:
        return float(np.max(self.lhs / self.rhs))


def check_pointwise_bound(delta: float, kappa: float, taus, ys, i: int = 0,
                          C: Optional[float] = None, rtol: float = 1e-12) -> BoundCheck:
    """Audit the pointwise derivative bound on sample points ``(taus, ys)``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    ys = np.asarray(ys, dtype=float)
    taus = np.asarray(taus, dtype=float)
    D = ys.shape[-1]
    C = pointwise_bound_constant(D, delta) if C is None else C
    lhs = np.abs(gaussian_deriv_eval(taus, ys, i, kappa))
    r = np.sqrt(np.sum(ys * ys, axis=-1))
    rhs = C / ((4 * kappa * taus) ** delta * r ** (D + 1 - 2 * delta))
    bad = int(np.count_nonzero(lhs > rhs * (1 + rtol)))
    return BoundCheck(lhs=lhs, rhs=rhs, violations=bad)


# --------------------------------------------------------------------------
# Laplace kernel

def sphere_area(D: int) -> float:
    """Surface area of the unit sphere in R^D."""
    return 2 * math.pi ** (D / 2) / math.gamma(D / 2)


def laplace_kernel(y, D: Optional[int] = None) -> np.ndarray:
    """Fundamental solution with ``Delta K = delta``."""
    y = np.asarray(y, dtype=float)
    D = y.shape[-1] if D is None else D
    r = np.sqrt(np.sum(y * y, axis=-1))
    if D == 2:
        return np.log(r) / (2 * math.pi)
    return -1.0 / ((D - 2) * sphere_area(D) * r ** (D - 2))


def laplace_kernel_grad(y, i: int) -> np.ndarray:
    """``d_i K_D(y) = y_i / (sigma_{D-1} |y|^D)``."""
    y = np.asarray(y, dtype=float)
    D = y.shape[-1]
    r = np.sqrt(np.sum(y * y, axis=-1))
    return y[..., i] / (sphere_area(D) * r**D)


def biot_savart_kernel_apply(x, h) -> np.ndarray:
    """``(x cross h) / (4 pi |x|^3)`` for points ``x`` and vectors ``h`` in 3-D."""
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1))
    if np.any(r == 0):
        raise ValueError("Biot-Savart kernel is singular at x = 0")
    return np.cross(x, h) / (4.0 * math.pi * r[..., None] ** 3)


@functools.lru_cache(maxsize=1)
def lattice_zeta_one() -> float:
    """Regularised lattice sum ``sum'_{n in Z^3} 1/|n|`` via Ewald splitting."""
    rng = range(-6, 7)
    s = 0.0
    sp = math.sqrt(math.pi)
    for n in itertools.product(rng, rng, rng):
        r2 = n[0] ** 2 + n[1] ** 2 + n[2] ** 2
        if r2 == 0:
            continue
        r = math.sqrt(r2)
        s += math.erfc(sp * r) / r + math.exp(-math.pi * r2) / (math.pi * r2)
    return s - 3.0


_EWALD_SPLIT = 2.4
_EWALD_IMAGES = 2
_EWALD_MODES = 4


@functools.lru_cache(maxsize=16)
def periodic_laplace_grad_kernel(grid: Grid, i: int) -> np.ndarray:
    """Samples of ``d_i G_per`` at the node offsets, by Ewald summation.

    ``G_per`` is the periodic Green function with ``Delta G_per = delta - 1/L^3``.
    The real-space part sums screened images ``|n|_inf <= 2``; the smooth
    remainder is a short Fourier series.  The value at offset 0 is set to 0,
    which is the integral of the odd kernel over any symmetric cell.
    """
    if grid.D != 3:
        raise ValueError("the periodic kernel quadrature is implemented for D = 3")
    N, L = grid.N, grid.L
    off = grid.h * np.arange(N)
    off[off >= L / 2] -= L
    O = np.meshgrid(off, off, off, indexing="ij")
    a = _EWALD_SPLIT / L
    out = np.zeros(grid.shape)
    rng = range(-_EWALD_IMAGES, _EWALD_IMAGES + 1)
    for n in itertools.product(rng, rng, rng):
        Y = [O[d] + n[d] * L for d in range(3)]
        r = np.sqrt(Y[0] ** 2 + Y[1] ** 2 + Y[2] ** 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            term = Y[i] / (4 * math.pi * r**3) * (
                special.erfc(a * r) + 2 * a * r / math.sqrt(math.pi) * np.exp(-(a * r) ** 2)
            )
        term[r == 0] = 0.0
        out += term
    # smooth part: (1/L^3) sum_{k != 0} k_i exp(-k^2/(4a^2))/k^2 sin(k.x)
    m = np.arange(-_EWALD_MODES, _EWALD_MODES + 1)
    k1 = 2 * math.pi * m / L
    K = np.meshgrid(k1, k1, k1, indexing="ij")
    k2 = K[0] ** 2 + K[1] ** 2 + K[2] ** 2
    coef = np.zeros_like(k2)
    nz = k2 > 0
    coef[nz] = K[i][nz] * np.exp(-k2[nz] / (4 * a * a)) / k2[nz] / L**3
    E = np.exp(1j * np.outer(k1, off))
    out += np.einsum("abc,ai,bj,ck->ijk", coef, E, E, E).imag
    out.setflags(write=False)
    return out


@functools.lru_cache(maxsize=16)
def _periodic_kernel_hat(grid: Grid, i: int) -> np.ndarray:
    return rfft(periodic_laplace_grad_kernel(grid, i), grid) * grid.cell_volume


def _central_diff4(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    return (-np.roll(f, -2, axis) + 8 * np.roll(f, -1, axis)
            - 8 * np.roll(f, 1, axis) + np.roll(f, 2, axis)) / (12 * h)


def periodic_grad_convolve(values: np.ndarray, grid: Grid, i: int) -> np.ndarray:
    """``int d_i G_per(x - z) f(z) dz`` by corrected midpoint quadrature.

    The punctured node sum is evaluated as a circular convolution (identical
    to the direct double sum, computed with FFTs for speed).  The omitted
    singular cell is replaced by the lattice correction
    ``zeta(1) h^2 / (12 pi) d_i f``, with ``d_i f`` from fourth-order central
    differences; this raises the rule from second to fourth order.
    """
    conv = irfft(rfft(values, grid) * _periodic_kernel_hat(grid, i), grid)
    corr = lattice_zeta_one() * grid.h**2 / (12 * math.pi)
    return conv + corr * _central_diff4(values, grid.h, values.ndim - grid.D + i)


def direct_grad_sum(values: np.ndarray, grid: Grid, i: int) -> np.ndarray:
    """Punctured node sum ``h^D sum_z K_i(x - z) f(z)`` by explicit loops (small grids)."""
    Kp = periodic_laplace_grad_kernel(grid, i)
    N = grid.N
    out = np.zeros(grid.shape)
    idx = np.indices(grid.shape).reshape(3, -1).T
    flat = values.ravel()
    for p, x in enumerate(idx):
        d = (x[None, :] - idx) % N
        out[tuple(x)] = np.sum(Kp[d[:, 0], d[:, 1], d[:, 2]] * flat)
    return out * grid.cell_volume


# --------------------------------------------------------------------------
# auto-control constants

@dataclass(frozen=True)
class AutoControlConstants:
    C0: float
    C_K: float
    C_G: float
    r: float
    rho: float
    kappa: float


def kernel_grad_norms(D: int) -> tuple:
    """``(|K_{D,i}|_{L1(B1)}, |K_{D,i}|_{L2(R^D \\ B1)})`` in closed form."""
    if D < 3:
        raise ValueError("the L2 tail of d_i K_D is finite only for D >= 3")
    sig = sphere_area(D)
    abs_moment = 2 * math.pi ** ((D - 1) / 2) / math.gamma((D + 1) / 2)
    l1 = abs_moment / sig
    l2 = math.sqrt(1.0 / (sig * D * (D - 2)))
    return l1, l2


def kernel_constant(D: int) -> float:
    l1, l2 = kernel_grad_norms(D)
    return max(1.0, l1 + l2)


def _quad(fun, T):
    # t = T w^2 removes the t^(-1/2) endpoint singularity
    val, _ = integrate.quad(lambda w: fun(T * w * w) * 2 * T * w, 0.0, 1.0, limit=200,
                            epsabs=1e-13, epsrel=1e-11)
    return val


def heat_kernel_norms(D: int, kappa: float, T: float) -> dict:
    """Space-time norms of ``G`` and ``G_i`` entering the auto-control constant."""
    if kappa <= 0:
        inf = math.inf
        return {"G_L1_ball": T, "G_L2_tail": 0.0, "Gi_L1_ball": inf, "Gi_L2_tail": 0.0}
    sig = sphere_area(D)
    abs_moment = 2 * math.pi ** ((D - 1) / 2) / math.gamma((D + 1) / 2)

    def g_l1(t):
        return special.gammainc(D / 2, 1.0 / (4 * kappa * t))

    def g_l2sq(t):
        return (2 * math.pi * kappa * t) ** (D / 2) / (4 * math.pi * kappa * t) ** D \
            * special.gammaincc(D / 2, 1.0 / (2 * kappa * t))

    def gi_l1(t):
        s = 4 * kappa * t
        a = (D + 1) / 2
        radial = 0.5 * s**a * special.gammainc(a, 1.0 / s) * special.gamma(a)
        return radial * abs_moment / (2 * kappa * t) * (math.pi * s) ** (-D / 2)

    def gi_l2sq(t):
        a2 = 2 * kappa * t
        b = (D + 2) / 2
        radial = 0.5 * a2**b * special.gammaincc(b, 1.0 / a2) * special.gamma(b)
        return radial * (sig / D) / (4 * kappa**2 * t**2) * (4 * math.pi * kappa * t) ** (-D)

    return {
        "G_L1_ball": _quad(g_l1, T),
        "G_L2_tail": math.sqrt(_quad(g_l2sq, T)),
        "Gi_L1_ball": _quad(gi_l1, T),
        "Gi_L2_tail": math.sqrt(_quad(gi_l2sq, T)),
    }


def heat_constant(D: int, kappa: float, T: float) -> float:
    n = heat_kernel_norms(D, kappa, T)
    return 1.0 + n["G_L1_ball"] + n["G_L2_tail"] + n["Gi_L1_ball"] + n["Gi_L2_tail"]


def rho_from_constants(C0: float, D: int, C_K: float, C_G: float) -> float:
    return 1.0 / (2 * D * C0 * (C_G + D * C_K * C_G))


def autocontrol_constants(D: int, C0: float, nu: float, T: float) -> AutoControlConstants:
    """Constants of the auto-controlled scheme.

    ``r = 1/(2 C0)`` and ``rho = 1/(2 D C0 (C_G + D C_K C_G))`` where ``C_G``
    is built from the scaled kernel with diffusivity ``rho r^2 nu``; ``rho``
    is therefore the fixed point of that relation, found by root bracketing.
    At ``nu = 0`` the ``G_i`` norm diverges and ``rho = 0``.
    """
    if C0 < 3:
        raise ValueError("auto-control needs C0 >= 3")
    if nu < 0 or T <= 0:
        raise ValueError("need nu >= 0 and T > 0")
    C_K = kernel_constant(D)
    r = 1.0 / (2 * C0)
    if nu == 0:
        return AutoControlConstants(C0, C_K, math.inf, r, 0.0, 0.0)

    def resid(log_rho):
        rho = math.exp(log_rho)
        return math.log(rho_from_constants(C0, D, C_K, heat_constant(D, rho * r * r * nu, T))) - log_rho

    hi = math.log(rho_from_constants(C0, D, C_K, 1.0))
    lo = hi - 10.0
    while resid(lo) < 0:
        lo -= 10.0
    log_rho = optimize.brentq(resid, lo, hi, xtol=1e-14, rtol=1e-14)
    rho = math.exp(log_rho)
    kappa = rho * r * r * nu
    return AutoControlConstants(C0, C_K, heat_constant(D, kappa, T), r, rho, kappa)


def vector_heat(v: VectorField, t: float, kappa: float) -> VectorField:
    return heat_convolve(v, t, kappa)
