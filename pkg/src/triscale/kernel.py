"""Gaussian interaction kernel family, its gradient, spatial integral and
the discrete convolutions producing the interaction potential xi on grids.

The kernel is K(r, s, x) = gamma(r) gamma(s) / (2 pi (r^2 + s^2))^(d/2)
* exp(-|x|^2 / (2 (r^2 + s^2))) with gamma(r) = r by default; its spatial
integral is Gamma(r, s) = gamma(r) gamma(s).  The rescaled family
K_eps(x) = eps^-d K(x / eps) concentrates to a point mass as eps -> 0.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.signal import fftconvolve

from .domain import DensityField, Grid3


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family parameters: amplitude gamma (None means gamma(r) = r),
    spatial dimension, and the localisation parameter eps."""

    gamma: Callable | None = None
    dim: int = 2
    eps: float = 1.0

    def gamma_value(self, r):
        if self.gamma is None:
            return np.asarray(r, dtype=float)
        return np.asarray(self.gamma(np.asarray(r, dtype=float)), dtype=float)

    @property
    def has_default_gamma(self) -> bool:
        return self.gamma is None


DEFAULT_SPEC = KernelSpec()


def eval_k(r, s, x, spec: KernelSpec = DEFAULT_SPEC):
    """Pointwise kernel value; x is a 2-vector or an array with last axis 2."""
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    s2 = r * r + s * s
    if np.any(s2 == 0.0):
        raise ValueError("eval_k: r = s = 0 gives a vanishing variance")
    x = np.asarray(x, dtype=float)
    sq = np.sum(x * x, axis=-1)
    amp = spec.gamma_value(r) * spec.gamma_value(s)
    d = spec.dim
    return amp / (2.0 * np.pi * s2) ** (d / 2.0) * np.exp(-sq / (2.0 * s2))


def grad_k(r, s, x, spec: KernelSpec = DEFAULT_SPEC):
    """Analytic spatial gradient of eval_k: -x / (r^2 + s^2) * K(r, s, x)."""
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    s2 = r * r + s * s
    x = np.asarray(x, dtype=float)
    k = eval_k(r, s, x, spec)
    return -x * (k / s2)[..., np.newaxis]


def gamma_big(r, s, spec: KernelSpec = DEFAULT_SPEC):
    """Spatial integral Gamma(r, s) = gamma(r) gamma(s): the Gaussian factor
    integrates to one for any amplitude function, so the closed form holds
    for every member of this family (rs with the default amplitude)."""
    return spec.gamma_value(r) * spec.gamma_value(s)


def gamma_big_quadrature(r: float, s: float, spec: KernelSpec = DEFAULT_SPEC,
                         n: int = 400, half_width_sigmas: float = 6.0) -> float:
    """Midpoint quadrature of eval_k over a box |x_i| <= half_width_sigmas * sigma.

    Independent oracle for gamma_big; not used by any solver path.
    """
    sigma = math.sqrt(r * r + s * s)
    half = half_width_sigmas * sigma
    h = 2.0 * half / n
    pts = -half + (np.arange(n) + 0.5) * h
    gx, gy = np.meshgrid(pts, pts, indexing="ij")
    xy = np.stack([gx, gy], axis=-1)
    return float(np.sum(eval_k(r, s, xy, spec)) * h * h)


def eval_k_eps(r, s, x, spec: KernelSpec = DEFAULT_SPEC):
    """Rescaled kernel eps^-d K(r, s, x / eps); identical to eval_k at eps = 1."""
    if spec.eps <= 0.0:
        raise ValueError("eval_k_eps requires eps > 0")
    x = np.asarray(x, dtype=float)
    return spec.eps ** (-spec.dim) * eval_k(r, s, x / spec.eps, spec)


@dataclass(eq=False)
class ConvolutionStencil:
    """Truncated sampled kernels, one 2D weight array per radius pair (k, l).

    Weights carry the dx*dy area element and are rescaled so that each array
    sums exactly to Gamma(r_k, r_l); the arrays are odd-sized and centered.
    """

    grid: Grid3
    eps: float
    weights: dict  # (k, l) -> 2D ndarray
    gamma_matrix: np.ndarray  # (nr, nr) values of Gamma(r_k, r_l)


def build_stencil(grid: Grid3, spec: KernelSpec = DEFAULT_SPEC) -> ConvolutionStencil:
    """Sample K_eps at grid offsets, truncated at 5 sigma (sigma^2 = r_k^2 + r_l^2,
    widened by max(eps, 1)), then normalize each pair's weights to Gamma(r_k, r_l)."""
    rs = grid.rs
    nr = grid.nr
    gam = np.empty((nr, nr))
    for k in range(nr):
        for l in range(nr):
            gam[k, l] = float(gamma_big(rs[k], rs[l], spec))
    weights = {}
    warned = False
    for k in range(nr):
        for l in range(k, nr):
            sigma = math.sqrt(rs[k] ** 2 + rs[l] ** 2)
            trunc = 5.0 * sigma * max(spec.eps, 1.0)
            hx = int(trunc / grid.dx)
            hy = int(trunc / grid.dy)
            if hx < 1 and hy < 1 and not warned:
                warnings.warn(
                    "stencil truncation radius below one cell; "
                    "convolution degenerates to a single cell",
                    stacklevel=2,
                )
                warned = True
            ox = np.arange(-hx, hx + 1) * grid.dx
            oy = np.arange(-hy, hy + 1) * grid.dy
            gx, gy = np.meshgrid(ox, oy, indexing="ij")
            xy = np.stack([gx, gy], axis=-1)
            w = eval_k_eps(rs[k], rs[l], xy, spec) * grid.dx * grid.dy
            w = np.where(gx * gx + gy * gy <= trunc * trunc, w, 0.0)
            total = float(np.sum(w))
            if total > 0.0:
                w *= gam[k, l] / total
            weights[(k, l)] = w
            if l != k:
                weights[(l, k)] = w
    return ConvolutionStencil(grid=grid, eps=spec.eps, weights=weights, gamma_matrix=gam)


def xi_meso(field: DensityField, stencil: ConvolutionStencil) -> np.ndarray:
    """Nonlocal interaction potential: xi_{ijk} = dr sum_l (W_{kl} * u_l)_{ij},
    with the density extended by zero outside the domain."""
    grid = field.grid
    if not grid.same_mesh(stencil.grid):
        raise ValueError("xi_meso: field grid does not match the stencil grid")
    u = field.values
    xi = np.zeros_like(u)
    for k in range(grid.nr):
        acc = np.zeros((grid.nx, grid.ny))
        for l in range(grid.nr):
            acc += fftconvolve(u[:, :, l], stencil.weights[(k, l)], mode="same")
        xi[:, :, k] = acc
    xi *= grid.dr
    return xi


def xi_meso_direct(field: DensityField, stencil: ConvolutionStencil) -> np.ndarray:
    """Direct-summation reference for xi_meso (small grids only)."""
    grid = field.grid
    u = field.values
    xi = np.zeros_like(u)
    for k in range(grid.nr):
        for l in range(grid.nr):
            w = stencil.weights[(k, l)]
            hx = (w.shape[0] - 1) // 2
            hy = (w.shape[1] - 1) // 2
            for i in range(grid.nx):
                for j in range(grid.ny):
                    s = 0.0
                    for p in range(-hx, hx + 1):
                        for q in range(-hy, hy + 1):
                            a, b = i - p, j - q
                            if 0 <= a < grid.nx and 0 <= b < grid.ny:
                                s += w[p + hx, q + hy] * u[a, b, l]
                    xi[i, j, k] += s
    xi *= grid.dr
    return xi


def gamma_matrix(grid: Grid3, spec: KernelSpec = DEFAULT_SPEC) -> np.ndarray:
    rs = grid.rs
    return np.asarray(gamma_big(rs[:, None], rs[None, :], spec), dtype=float)


def xi_macro(field: DensityField, spec: KernelSpec = DEFAULT_SPEC,
             gam: np.ndarray | None = None) -> np.ndarray:
    """Local interaction potential: xi_{ijk} = dr sum_l Gamma(r_k, r_l) u_{ijl}."""
    grid = field.grid
    if gam is None:
        gam = gamma_matrix(grid, spec)
    if gam.shape != (grid.nr, grid.nr):
        raise ValueError("xi_macro: Gamma matrix shape mismatch")
    return grid.dr * np.einsum("ijl,kl->ijk", field.values, gam)
