"""Microscopic stochastic simulator: Euler transport with pairwise repulsion,
clamped growth, Poisson-clock binary division with rejection sampling, and
adaptive time stepping.

Splitting order within each step is transport -> growth -> division; division
decisions use the post-growth radii.  Variates are consumed from one per-run
stream in a fixed order (init: disk radii, angles, particle radii; per step:
transport normals as one (N, 2) block, division uniforms as one (N,) block,
then one angle per divider in index order), so single-threaded runs are
bitwise reproducible for a fixed (seed, run_index).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .domain import DensityField, DiagnosticsRecord, Grid3, ParticleEnsemble, SimConfig, SQRT2
from .kernel import DEFAULT_SPEC, KernelSpec, grad_k
from . import observables

DEFAULT_PARTICLE_CAP = 10_000
DEFAULT_OUTPUT_TIMES = (0.0, 4.0, 20.0, 60.0, 100.0)


@dataclass
class RngStream:
    """Seeded per-run variate stream; reproducible for fixed (seed, run index)."""

    master_seed: int
    run_index: int = 0
    draw_count: int = 0
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self._gen = np.random.default_rng(self.master_seed + self.run_index)

    def normals(self, shape) -> np.ndarray:
        out = self._gen.standard_normal(shape)
        self.draw_count += out.size
        return out

    def uniforms(self, n: int) -> np.ndarray:
        out = self._gen.random(n)
        self.draw_count += n
        return out


@dataclass(frozen=True)
class BetaRate:
    """Division rate: zero below sqrt(2) r_min, linear ramp up to beta_bar at
    r_max, and forced division (infinite rate) at r >= r_max."""

    beta_bar: float
    r_min: float
    r_max: float

    @classmethod
    def from_config(cls, config: SimConfig) -> "BetaRate":
        return cls(config.beta_bar, config.r_min, config.r_max)


def beta(r, rate: BetaRate):
    """Piecewise division rate; +inf marks forced division at r >= r_max.

    The forced-division sentinel belongs to the division process: with
    division switched off (beta_bar = 0) the rate is identically zero, so
    growth-only populations saturate at r_max instead of cycling.
    """
    r = np.asarray(r, dtype=float)
    lo = SQRT2 * rate.r_min
    span = rate.r_max - lo
    ramp = rate.beta_bar * (r - lo) / span if span > 0 else np.zeros_like(r)
    out = np.where(r < lo, 0.0, ramp)
    out = np.where(r >= rate.r_max, np.inf if rate.beta_bar > 0.0 else 0.0, out)
    return out if out.ndim else float(out)


def beta_l1(rate: BetaRate) -> float:
    """Integral of the finite ramp over [sqrt(2) r_min, r_max]."""
    span = rate.r_max - SQRT2 * rate.r_min
    if span <= 0.0:
        return 0.0
    return 0.5 * rate.beta_bar * span


def init_ensemble(config: SimConfig, rng: RngStream) -> ParticleEnsemble:
    """n0 particles uniform on the disk of radius S around the domain center,
    radii i.i.d. uniform on [r_min, r_max]."""
    n = config.n0
    cx, cy = config.center
    rad = config.init_support_s * np.sqrt(rng.uniforms(n))
    ang = 2.0 * np.pi * rng.uniforms(n)
    positions = np.column_stack([cx + rad * np.cos(ang), cy + rad * np.sin(ang)])
    radii = config.r_min + (config.r_max - config.r_min) * rng.uniforms(n)
    return ParticleEnsemble(0.0, positions, radii, np.arange(n, dtype=np.int64))


@njit(parallel=True, cache=True)
def _pairwise_drift(pos, amps, radii, inv_n):  # pragma: no cover - numba
    n = pos.shape[0]
    out = np.zeros((n, 2))
    for i in prange(n):
        xi = pos[i, 0]
        yi = pos[i, 1]
        ri2 = radii[i] * radii[i]
        ai = amps[i]
        ax = 0.0
        ay = 0.0
        for j in range(n):
            s2 = ri2 + radii[j] * radii[j]
            dx = xi - pos[j, 0]
            dy = yi - pos[j, 1]
            w = ai * amps[j] / (2.0 * np.pi * s2) * np.exp(-(dx * dx + dy * dy) / (2.0 * s2))
            ax += dx / s2 * w
            ay += dy / s2 * w
        out[i, 0] = ax * inv_n
        out[i, 1] = ay * inv_n
    return out


def compute_drift(ensemble: ParticleEnsemble, spec: KernelSpec = DEFAULT_SPEC,
                  n_scale: int = 1) -> np.ndarray:
    """Repulsive drift -(1/N) sum_j grad K(R_i, R_j, X_i - X_j); the self term
    vanishes exactly."""
    n = ensemble.count
    if n == 0:
        return np.zeros((0, 2))
    amps = np.ascontiguousarray(spec.gamma_value(ensemble.radii))
    if not np.any(amps):
        return np.zeros((n, 2))
    return _pairwise_drift(
        np.ascontiguousarray(ensemble.positions),
        amps,
        np.ascontiguousarray(ensemble.radii),
        1.0 / n_scale,
    )


def compute_drift_reference(ensemble: ParticleEnsemble, spec: KernelSpec = DEFAULT_SPEC,
                            n_scale: int = 1) -> np.ndarray:
    """Plain pairwise summation via grad_k; oracle for the accelerated path."""
    n = ensemble.count
    out = np.zeros((n, 2))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            out[i] -= grad_k(ensemble.radii[i], ensemble.radii[j],
                             ensemble.positions[i] - ensemble.positions[j], spec)
    return out / n_scale


def adaptive_dt_micro(ensemble: ParticleEnsemble, config: SimConfig,
                      drift: np.ndarray | None = None,
                      spec: KernelSpec = DEFAULT_SPEC) -> float:
    """Min of the displacement cap, diffusion, division and growth terms;
    zero-denominator terms are dropped, with a fixed fallback if all drop."""
    if ensemble.count == 0:
        raise ValueError("adaptive_dt_micro requires a nonempty ensemble")
    if drift is None:
        drift = compute_drift(ensemble, spec, config.n0)
    delta = config.delta_micro
    candidates = []
    max_drift = float(np.max(np.hypot(drift[:, 0], drift[:, 1]))) if drift.size else 0.0
    if max_drift > 0.0:
        candidates.append(delta / max_drift)
    if config.diffusion_d > 0.0:
        candidates.append(delta * delta / (4.0 * config.diffusion_d))
    bl1 = beta_l1(BetaRate.from_config(config))
    if bl1 > 0.0:
        candidates.append(0.1 * config.r_min / bl1)
    if config.growth_g > 0.0:
        candidates.append(0.1 * config.r_min / (2.0 * config.growth_g))
    if not candidates:
        return config.t_final / 1000.0
    return min(candidates)


def step_transport(ensemble: ParticleEnsemble, dt: float, rng: RngStream,
                   config: SimConfig, spec: KernelSpec = DEFAULT_SPEC,
                   drift: np.ndarray | None = None) -> ParticleEnsemble:
    """Explicit Euler move: drift * dt plus sqrt(2 D dt) * standard normals.

    Positions are not clamped at the domain boundary; the domain is assumed
    large enough and escapees are only excluded later at binning time.
    """
    if drift is None:
        drift = compute_drift(ensemble, spec, config.n0)
    noise = math.sqrt(2.0 * config.diffusion_d * dt) * rng.normals((ensemble.count, 2))
    out = ensemble.copy()
    out.positions = ensemble.positions + drift * dt + noise
    return out


def step_growth(ensemble: ParticleEnsemble, dt: float, config: SimConfig) -> ParticleEnsemble:
    """Clamped Euler radius update: R' = min(r_max, R + dt g)."""
    out = ensemble.copy()
    out.radii = np.minimum(config.r_max, ensemble.radii + dt * config.growth_g)
    return out


def step_division(ensemble: ParticleEnsemble, dt: float, rng: RngStream,
                  config: SimConfig) -> ParticleEnsemble:
    """Each particle divides with probability 1 - exp(-beta(R) dt) (one at
    r >= r_max); mother keeps its id at radius R / sqrt(2), offset by
    -alpha R' (cos, sin); the daughter appears symmetrically with a new id."""
    rate = BetaRate.from_config(config)
    b = beta(ensemble.radii, rate)
    with np.errstate(invalid="ignore"):
        p = -np.expm1(-b * dt)
    p = np.where(np.isinf(b), 1.0, p)
    u = rng.uniforms(ensemble.count)
    dividing = np.flatnonzero(u < p)
    out = ensemble.copy()
    if dividing.size == 0:
        return out
    theta = 2.0 * np.pi * rng.uniforms(dividing.size)
    new_r = ensemble.radii[dividing] / SQRT2
    offset = config.alpha * new_r[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
    daughters_pos = ensemble.positions[dividing] + offset
    out.positions[dividing] -= offset
    out.radii[dividing] = new_r
    next_id = int(ensemble.ids.max()) + 1 if ensemble.count else 0
    new_ids = np.arange(next_id, next_id + dividing.size, dtype=np.int64)
    out.positions = np.vstack([out.positions, daughters_pos])
    out.radii = np.concatenate([out.radii, new_r])
    out.ids = np.concatenate([out.ids, new_ids])
    return out


@dataclass
class MicroRunResult:
    snapshots: list  # (time, ParticleEnsemble)
    diagnostics: list  # DiagnosticsRecord
    truncated: bool = False
    truncation_time: float | None = None
    escaped: int = 0  # particles outside the domain at any recorded time


def _micro_diagnostics(ensemble: ParticleEnsemble, config: SimConfig) -> DiagnosticsRecord:
    center = np.asarray(config.center)
    d2 = np.sum((ensemble.positions - center) ** 2, axis=1)
    return DiagnosticsRecord(
        time=ensemble.time,
        total_mass=ensemble.count / config.n0,
        particle_count=ensemble.count,
        second_moment=float(np.sum(d2)) / config.n0,
    )


def run_micro(config: SimConfig, run_index: int = 0,
              output_times=DEFAULT_OUTPUT_TIMES,
              spec: KernelSpec = DEFAULT_SPEC,
              particle_cap: int = DEFAULT_PARTICLE_CAP) -> MicroRunResult:
    """Full splitting-scheme run, with snapshots at the requested output times.

    Terminates early (with a truncation flag) once the particle count exceeds
    `particle_cap`; the partial output is retained.
    """
    times = sorted({float(t) for t in output_times if 0.0 <= t <= config.t_final})
    rng = RngStream(config.seed, run_index)
    ens = init_ensemble(config, rng)
    result = MicroRunResult(snapshots=[], diagnostics=[])
    pending = list(times)
    if pending and pending[0] == 0.0:
        result.snapshots.append((0.0, ens.copy()))
        result.diagnostics.append(_micro_diagnostics(ens, config))
        pending.pop(0)
    t = 0.0
    tiny = 1e-12
    while t < config.t_final - tiny:
        drift = compute_drift(ens, spec, config.n0)
        dt = adaptive_dt_micro(ens, config, drift=drift, spec=spec)
        horizon = pending[0] if pending else config.t_final
        dt = min(dt, horizon - t, config.t_final - t)
        ens = step_transport(ens, dt, rng, config, spec, drift=drift)
        ens = step_growth(ens, dt, config)
        ens = step_division(ens, dt, rng, config)
        t += dt
        ens.time = t
        if pending and t >= pending[0] - 1e-9:
            result.snapshots.append((pending[0], ens.copy()))
            result.diagnostics.append(_micro_diagnostics(ens, config))
            pending.pop(0)
        if ens.count > particle_cap:
            result.truncated = True
            result.truncation_time = t
            if not result.snapshots or result.snapshots[-1][0] < t:
                result.snapshots.append((t, ens.copy()))
                result.diagnostics.append(_micro_diagnostics(ens, config))
            break
    inside = _inside_domain(ens, config)
    result.escaped = int(ens.count - np.count_nonzero(inside))
    return result


def _inside_domain(ensemble: ParticleEnsemble, config: SimConfig) -> np.ndarray:
    p = ensemble.positions
    return (
        (p[:, 0] >= config.x_min) & (p[:, 0] <= config.x_max)
        & (p[:, 1] >= config.x_min) & (p[:, 1] <= config.x_max)
    )


def ensemble_average(runs: list, grid: Grid3, n_scale: int) -> list:
    """Average the binned fields of several runs sharing output times.

    `runs` is a list of snapshot series [(t, ensemble), ...]; returns one
    DensityField per shared output time.
    """
    if not runs:
        raise ValueError("ensemble_average requires at least one run")
    times = [t for t, _ in runs[0]]
    for series in runs[1:]:
        if [t for t, _ in series] != times:
            raise ValueError("ensemble_average: runs have mismatched output times")
    averaged = []
    for idx, t in enumerate(times):
        acc = np.zeros((grid.nx, grid.ny, grid.nr))
        for series in runs:
            acc += observables.bin_particles(series[idx][1], grid, n_scale).values
        acc /= len(runs)
        averaged.append(DensityField(grid, acc, time=t))
    return averaged
