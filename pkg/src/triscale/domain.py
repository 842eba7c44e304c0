"""Configuration, grids and the shared state containers used by all solvers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

SQRT2 = math.sqrt(2.0)

# Fields parsed as integers in config files / CLI overrides.
_INT_FIELDS = {"n0", "nx", "nr", "seed", "n_runs", "dim"}


class ConfigError(ValueError):
    """Raised for malformed config files or invalid parameter sets."""


@dataclass(frozen=True)
class SimConfig:
    """Every physical and numerical parameter of a run.

    Physical defaults follow the reference parameter set used throughout
    (square domain [-50, 50]^2, radii in [0.2, 1], D = 0.01, g = 0.008,
    beta_bar = 0.05, alpha = 0.1, T = 100, initial ball radius S = 2).
    Grid resolution and the micro displacement cap are solver controls.
    """

    x_min: float = -50.0
    x_max: float = 50.0
    r_min: float = 0.2
    r_max: float = 1.0
    n0: int = 2000
    diffusion_d: float = 0.01
    growth_g: float = 0.008
    beta_bar: float = 0.05
    alpha: float = 0.1
    t_final: float = 100.0
    init_support_s: float = 2.0
    eps: float = 1.0
    nx: int = 100
    nr: int = 16
    delta_micro: float = 0.02
    cfl_safety: float = 0.4
    seed: int = 0
    n_runs: int = 6
    dim: int = 2

    @property
    def center(self) -> tuple[float, float]:
        c = 0.5 * (self.x_min + self.x_max)
        return (c, c)

    def with_overrides(self, **kwargs) -> "SimConfig":
        known = {f.name for f in fields(self)}
        unknown = set(kwargs) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        coerced = {k: (int(v) if k in _INT_FIELDS else float(v)) for k, v in kwargs.items()}
        return replace(self, **coerced)


def validate_config(config: SimConfig) -> list[str]:
    """Return a list of invariant violations; empty iff the config is valid."""
    v = []
    if not config.x_min < config.x_max:
        v.append("x_min must be < x_max")
    if not (0.0 < config.r_min < config.r_max):
        v.append("radius bounds must satisfy 0 < r_min < r_max")
    if config.n0 < 1:
        v.append("n0 must be >= 1")
    if config.diffusion_d < 0.0:
        v.append("diffusion_d must be >= 0")
    if config.growth_g < 0.0:
        v.append("growth_g must be >= 0")
    if config.beta_bar < 0.0:
        v.append("beta_bar must be >= 0")
    if not (0.0 <= config.alpha < 1.0):
        v.append("alpha must satisfy 0 <= alpha < 1")
    if config.eps <= 0.0:
        v.append("eps must be > 0")
    if config.nx < 2:
        v.append("nx must be >= 2")
    if config.nr < 2:
        v.append("nr must be >= 2")
    if config.n_runs < 1:
        v.append("n_runs must be >= 1")
    if config.t_final <= 0.0:
        v.append("t_final must be > 0")
    if config.delta_micro <= 0.0:
        v.append("delta_micro must be > 0")
    if not (0.0 < config.cfl_safety <= 1.0):
        v.append("cfl_safety must be in (0, 1]")
    if config.init_support_s <= 0.0:
        v.append("init_support_s must be > 0")
    elif config.x_min < config.x_max and config.init_support_s > 0.5 * (config.x_max - config.x_min):
        v.append("init_support_s: ball of radius S must fit inside the domain")
    if config.dim != 2:
        v.append("dim: solvers are built for dim = 2")
    return v


@dataclass(frozen=True, eq=False)
class Grid3:
    """Uniform cell-centered (x, y, r) mesh; centers x_i = x_min + (i - 1/2) dx."""

    x_min: float
    x_max: float
    r_min: float
    r_max: float
    nx: int
    ny: int
    nr: int
    dx: float
    dy: float
    dr: float
    xs: np.ndarray = field(repr=False)
    ys: np.ndarray = field(repr=False)
    rs: np.ndarray = field(repr=False)

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy * self.dr

    @property
    def center(self) -> tuple[float, float]:
        c = 0.5 * (self.x_min + self.x_max)
        return (c, c)

    def same_mesh(self, other: "Grid3") -> bool:
        return (
            self.nx == other.nx
            and self.ny == other.ny
            and self.nr == other.nr
            and math.isclose(self.dx, other.dx)
            and math.isclose(self.dr, other.dr)
            and math.isclose(self.x_min, other.x_min)
            and math.isclose(self.r_min, other.r_min)
        )


def build_grid(config: SimConfig) -> Grid3:
    """Build the cell-centered uniform grid spanning the domain exactly."""
    if config.nx < 2 or config.nr < 2:
        raise ConfigError("build_grid requires nx >= 2 and nr >= 2")
    nx = config.nx
    ny = config.nx  # square domain
    nr = config.nr
    dx = (config.x_max - config.x_min) / nx
    dr = (config.r_max - config.r_min) / nr
    xs = config.x_min + (np.arange(nx) + 0.5) * dx
    rs = config.r_min + (np.arange(nr) + 0.5) * dr
    return Grid3(
        x_min=config.x_min,
        x_max=config.x_max,
        r_min=config.r_min,
        r_max=config.r_max,
        nx=nx,
        ny=ny,
        nr=nr,
        dx=dx,
        dy=dx,
        dr=dr,
        xs=xs,
        ys=xs.copy(),
        rs=rs,
    )


@dataclass
class ParticleEnsemble:
    """Microscopic state: positions (N, 2), radii (N,) and stable integer ids."""

    time: float
    positions: np.ndarray
    radii: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.radii = np.asarray(self.radii, dtype=float)
        self.ids = np.asarray(self.ids, dtype=np.int64)

    @property
    def count(self) -> int:
        return self.radii.shape[0]

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.time, self.positions.copy(), self.radii.copy(), self.ids.copy())


@dataclass
class DensityField:
    """Cell-averaged density on a Grid3; values shaped (nx, ny, nr)."""

    grid: Grid3
    values: np.ndarray
    time: float = 0.0

    def copy(self) -> "DensityField":
        return DensityField(self.grid, self.values.copy(), self.time)

    def total_mass(self) -> float:
        return float(np.sum(self.values)) * self.grid.cell_volume


@dataclass
class DiagnosticsRecord:
    """One time point of the diagnostic series shared by all three solvers."""

    time: float
    total_mass: float
    particle_count: int | None = None
    shannon_entropy: float | None = None
    rao_functional: float | None = None
    second_moment: float | None = None
    e_tot: float | None = None
    e_spatial: float | None = None
    e_size: float | None = None


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines; `#` starts a comment; unknown keys rejected later."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value in {raw!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path, overrides: dict | None = None) -> SimConfig:
    """Load a config file and apply overrides on top; validates key names only."""
    with open(path, "r", encoding="utf-8") as fh:
        values = parse_config_text(fh.read())
    if overrides:
        values.update(overrides)
    return SimConfig().with_overrides(**values)
