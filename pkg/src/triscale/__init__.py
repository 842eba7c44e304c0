"""Three-scale simulation suite for populations of diffusing, repelling,
growing and dividing spherical particles: a stochastic particle model, a
nonlocal mean-field PDE, and its localisation-limit PDE, with shared
observables and diagnostics."""

__version__ = "0.1.0"

from .domain import (
    ConfigError,
    DensityField,
    DiagnosticsRecord,
    Grid3,
    ParticleEnsemble,
    SimConfig,
    build_grid,
    load_config,
    validate_config,
)
from .kernel import KernelSpec

__all__ = [
    "ConfigError",
    "DensityField",
    "DiagnosticsRecord",
    "Grid3",
    "KernelSpec",
    "ParticleEnsemble",
    "SimConfig",
    "build_grid",
    "load_config",
    "validate_config",
    "__version__",
]
