"""Semi-discrete finite-volume core shared by the mesoscopic (nonlocal xi)
and macroscopic (local xi) solvers: upwind advection, centered diffusion,
growth transport in r, a conservative binary-division source, and CFL-limited
forward-Euler time stepping with no-flux boundaries on every face.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import DensityField, DiagnosticsRecord, Grid3, SimConfig, SQRT2, build_grid
from .kernel import DEFAULT_SPEC, KernelSpec, build_stencil, gamma_matrix, xi_macro, xi_meso
from .micro import BetaRate, beta, beta_l1, DEFAULT_OUTPUT_TIMES
from . import observables


class CflViolationError(RuntimeError):
    """Raised when a forward-Euler step produces negativity beyond tolerance."""


@dataclass(eq=False)
class FluxField:
    """Face fluxes; boundary faces are identically zero (no-flux)."""

    fx: np.ndarray  # (nx + 1, ny, nr)
    fy: np.ndarray  # (nx, ny + 1, nr)
    g: np.ndarray  # (nx, ny, nr + 1)


@dataclass(eq=False)
class FragMap:
    """Radial index maps for the sqrt(2) change of variable.

    `up[k]` is the bin containing sqrt(2) r_k (-1 when sqrt(2) r_k > r_max);
    `down[j]` is the bin receiving the daughters of bin j, i.e. the bin
    containing r_j / sqrt(2) (-1 when below the grid, where beta vanishes).
    """

    up: np.ndarray
    down: np.ndarray


def build_frag_map(grid: Grid3) -> FragMap:
    rs = grid.rs
    up = np.full(grid.nr, -1, dtype=np.int64)
    down = np.full(grid.nr, -1, dtype=np.int64)
    for k in range(grid.nr):
        target = SQRT2 * rs[k]
        if target <= grid.r_max:
            up[k] = min(int((target - grid.r_min) / grid.dr), grid.nr - 1)
        child = rs[k] / SQRT2
        if child >= grid.r_min:
            down[k] = min(int((child - grid.r_min) / grid.dr), grid.nr - 1)
    return FragMap(up=up, down=down)


def init_density(config: SimConfig, grid: Grid3) -> DensityField:
    """Uniform density on the ball of radius S times [r_min, r_max], rescaled
    so the discrete mass is exactly one (compensating the staircase boundary)."""
    cx, cy = grid.center
    gx, gy = np.meshgrid(grid.xs - cx, grid.ys - cy, indexing="ij")
    inside = (gx * gx + gy * gy) <= config.init_support_s ** 2
    if not np.any(inside):
        raise ValueError("init_density: the initial ball covers no cell center")
    s = config.init_support_s
    level = 1.0 / (np.pi * s * s * (config.r_max - config.r_min))
    values = np.where(inside[:, :, None], level, 0.0) * np.ones((1, 1, grid.nr))
    mass = float(np.sum(values)) * grid.cell_volume
    values /= mass
    return DensityField(grid, values, time=0.0)


def velocities(xi: np.ndarray, grid: Grid3) -> tuple[np.ndarray, np.ndarray]:
    """Face velocities from central differences of xi, with a leading minus
    (repulsive potential drives down-gradient transport)."""
    nx, ny, nr = xi.shape
    vx = np.zeros((nx + 1, ny, nr))
    vy = np.zeros((nx, ny + 1, nr))
    vx[1:nx] = -(xi[1:] - xi[:-1]) / grid.dx
    vy[:, 1:ny] = -(xi[:, 1:] - xi[:, :-1]) / grid.dy
    return vx, vy


def upwind_fluxes(field: DensityField, vx: np.ndarray, vy: np.ndarray,
                  config: SimConfig) -> FluxField:
    """Donor-cell advective fluxes plus centered diffusion in x and y, and the
    growth flux g * u upwinded from below in r; boundary faces forced to zero."""
    u = field.values
    grid = field.grid
    d = config.diffusion_d
    fx = np.zeros((grid.nx + 1, grid.ny, grid.nr))
    fy = np.zeros((grid.nx, grid.ny + 1, grid.nr))
    g = np.zeros((grid.nx, grid.ny, grid.nr + 1))
    v = vx[1:grid.nx]
    fx[1:grid.nx] = (
        u[:-1] * np.maximum(0.0, v)
        + u[1:] * np.minimum(0.0, v)
        - d * (u[1:] - u[:-1]) / grid.dx
    )
    v = vy[:, 1:grid.ny]
    fy[:, 1:grid.ny] = (
        u[:, :-1] * np.maximum(0.0, v)
        + u[:, 1:] * np.minimum(0.0, v)
        - d * (u[:, 1:] - u[:, :-1]) / grid.dy
    )
    g[:, :, 1:grid.nr] = config.growth_g * u[:, :, :-1]
    return FluxField(fx=fx, fy=fy, g=g)


def frag_source(field: DensityField, grid: Grid3, rate: BetaRate,
                frag_map: FragMap | None = None) -> np.ndarray:
    """Binary-division source: loss beta(r_k) u_k everywhere, gain 2 beta(r_j)
    u_j scattered to the bin containing r_j / sqrt(2).

    The gain is the change-of-variable integral of the continuum source over
    each receiving bin; scattering donor by donor makes the discrete number
    balance (mass production = sum of division rates) exact.
    """
    if frag_map is None:
        frag_map = build_frag_map(grid)
    b = np.asarray(beta(grid.rs, rate))
    u = field.values
    loss = u * b[None, None, :]
    gain = np.zeros_like(u)
    for j in range(grid.nr):
        if b[j] > 0.0 and frag_map.down[j] >= 0:
            gain[:, :, frag_map.down[j]] += 2.0 * b[j] * u[:, :, j]
    return gain - loss


def rhs(field: DensityField, xi: np.ndarray, config: SimConfig,
        rate: BetaRate | None = None, frag_map: FragMap | None = None,
        fluxes: FluxField | None = None,
        vx: np.ndarray | None = None, vy: np.ndarray | None = None) -> np.ndarray:
    """Semi-discrete right-hand side: flux divergences plus the division source."""
    if not np.all(np.isfinite(field.values)) or not np.all(np.isfinite(xi)):
        raise ValueError("rhs: NaN or Inf in the density or potential")
    grid = field.grid
    if vx is None or vy is None:
        vx, vy = velocities(xi, grid)
    if fluxes is None:
        fluxes = upwind_fluxes(field, vx, vy, config)
    if rate is None:
        rate = BetaRate.from_config(config)
    out = (
        -(fluxes.fx[1:] - fluxes.fx[:-1]) / grid.dx
        - (fluxes.fy[:, 1:] - fluxes.fy[:, :-1]) / grid.dy
        - (fluxes.g[:, :, 1:] - fluxes.g[:, :, :-1]) / grid.dr
    )
    if rate.beta_bar > 0.0:
        out += frag_source(field, grid, rate, frag_map)
    return out


POSITIVITY_SAFETY = 0.95


def _positivity_dt(vx: np.ndarray, vy: np.ndarray, grid: Grid3,
                   config: SimConfig) -> float:
    """Largest dt keeping every cell nonnegative under the explicit update:
    dt * (upwind outflow + diffusion + growth outflow + division loss) <= 1
    per cell.  Gains only add mass, so this bound is exact."""
    out = (
        (np.maximum(vx[1:], 0.0) + np.maximum(-vx[:-1], 0.0)) / grid.dx
        + (np.maximum(vy[:, 1:], 0.0) + np.maximum(-vy[:, :-1], 0.0)) / grid.dy
    )
    loss = float(np.max(out)) if out.size else 0.0
    loss += 2.0 * config.diffusion_d * (1.0 / grid.dx ** 2 + 1.0 / grid.dy ** 2)
    loss += config.growth_g / grid.dr
    b = beta(grid.rs, BetaRate.from_config(config))
    loss += float(np.max(b)) if b.size else 0.0
    return POSITIVITY_SAFETY / loss if loss > 0.0 else math.inf


def cfl_dt(field: DensityField, vx: np.ndarray, vy: np.ndarray,
           config: SimConfig, time_left: float | None = None) -> float:
    """CFL-limited step: min of advection, diffusion, division and growth
    bounds, each scaled by cfl_safety; zero-denominator terms are dropped.
    A per-cell positivity bound is applied on top, because the per-term
    minima alone do not control the combined advection-diffusion update."""
    grid = field.grid
    c = config.cfl_safety
    candidates = []
    vmax = max(float(np.max(np.abs(vx))) if vx.size else 0.0,
               float(np.max(np.abs(vy))) if vy.size else 0.0)
    if vmax > 0.0:
        candidates.append(c * min(grid.dx, grid.dy) / vmax)
    if config.diffusion_d > 0.0:
        candidates.append(c * grid.dx * grid.dy / (2.0 * config.diffusion_d))
    bl1 = beta_l1(BetaRate.from_config(config))
    if bl1 > 0.0:
        candidates.append(c * grid.dr / bl1)
    if config.growth_g > 0.0:
        candidates.append(c * grid.dr / (2.0 * config.growth_g))
    dt = min(candidates) if candidates else config.t_final / 1000.0
    dt = min(dt, _positivity_dt(vx, vy, grid, config))
    if time_left is not None:
        dt = min(dt, time_left)
    return dt


NEGATIVITY_TOL = 1e-12


def step(field: DensityField, dt: float, rhs_values: np.ndarray) -> DensityField:
    """Forward-Euler update; clips roundoff-level negatives, aborts beyond."""
    new = field.values + dt * rhs_values
    lowest = float(np.min(new))
    if lowest < -NEGATIVITY_TOL:
        raise CflViolationError(
            f"negative density {lowest:.3e} after step dt={dt:.3e} at t={field.time:.6f}; "
            "the CFL condition was violated"
        )
    np.clip(new, 0.0, None, out=new)
    return DensityField(field.grid, new, time=field.time + dt)


@dataclass
class FvRunResult:
    snapshots: list  # DensityField at output times
    diagnostics: list  # DiagnosticsRecord per accepted step (incl. t=0, t_final)
    grid: Grid3


def _fv_diagnostics(field: DensityField, xi: np.ndarray) -> DiagnosticsRecord:
    return DiagnosticsRecord(
        time=field.time,
        total_mass=field.total_mass(),
        shannon_entropy=observables.shannon_entropy(field),
        rao_functional=observables.rao_functional(field, xi),
        second_moment=observables.second_moment(field),
    )


def _run_fv(config: SimConfig, xi_fn, output_times) -> FvRunResult:
    grid = build_grid(config)
    field = init_density(config, grid)
    rate = BetaRate.from_config(config)
    fmap = build_frag_map(grid)
    times = sorted({float(t) for t in output_times if 0.0 <= t <= config.t_final})
    pending = list(times)
    result = FvRunResult(snapshots=[], diagnostics=[], grid=grid)
    if pending and pending[0] == 0.0:
        result.snapshots.append(field.copy())
        pending.pop(0)
    t = 0.0
    tiny = 1e-12
    while True:
        xi = xi_fn(field)
        result.diagnostics.append(_fv_diagnostics(field, xi))
        if t >= config.t_final - tiny:
            break
        vx, vy = velocities(xi, grid)
        horizon = pending[0] if pending else config.t_final
        dt = cfl_dt(field, vx, vy, config, time_left=min(horizon, config.t_final) - t)
        r = rhs(field, xi, config, rate=rate, frag_map=fmap, vx=vx, vy=vy)
        field = step(field, dt, r)
        t = field.time
        if pending and t >= pending[0] - 1e-9:
            snap = field.copy()
            snap.time = pending[0]
            result.snapshots.append(snap)
            pending.pop(0)
    return result


def run_meso(config: SimConfig, output_times=DEFAULT_OUTPUT_TIMES,
             spec: KernelSpec | None = None) -> FvRunResult:
    """Mesoscopic solver: xi from the truncated-stencil spatial convolution."""
    if spec is None:
        spec = KernelSpec(eps=config.eps)
    grid = build_grid(config)
    stencil = build_stencil(grid, spec)
    return _run_fv(config, lambda f: xi_meso(f, stencil), output_times)


def run_macro(config: SimConfig, output_times=DEFAULT_OUTPUT_TIMES,
              spec: KernelSpec | None = None) -> FvRunResult:
    """Macroscopic solver: local xi through Gamma(r, s); much cheaper per step."""
    if spec is None:
        spec = KernelSpec(eps=config.eps)
    grid = build_grid(config)
    gam = gamma_matrix(grid, spec)
    return _run_fv(config, lambda f: xi_macro(f, spec, gam), output_times)
