"""CSV and manifest serialization.

All CSVs use '.' decimal, ',' separator, LF line endings and a header row.
Floats are written with 17 significant digits so re-runs round-trip bitwise.
"""
from __future__ import annotations

import json
import os
from datetime import datetime, timezone

import numpy as np
import pandas as pd

from .domain import DensityField, DiagnosticsRecord, Grid3, ParticleEnsemble

FLOAT_FMT = "%.17g"


def _write_table(path, header: str, columns, fmts):
    data = np.column_stack(columns)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        np.savetxt(fh, data, fmt=fmts, delimiter=",", newline="\n")


def write_particles_csv(path, snapshots) -> None:
    """One row per particle per output time: t,id,x,y,r."""
    ts, ids, xs, ys, rs = [], [], [], [], []
    for t, ens in snapshots:
        n = ens.count
        ts.append(np.full(n, t))
        ids.append(ens.ids)
        xs.append(ens.positions[:, 0])
        ys.append(ens.positions[:, 1])
        rs.append(ens.radii)
    _write_table(
        path,
        "t,id,x,y,r",
        [np.concatenate(c) if c else np.empty(0) for c in (ts, ids, xs, ys, rs)],
        [FLOAT_FMT, "%d", FLOAT_FMT, FLOAT_FMT, FLOAT_FMT],
    )


def write_fields_csv(path, fields: list[DensityField]) -> None:
    """Flat rows t,i,j,k,x,y,r,u with 1-based cell indices."""
    grid = fields[0].grid
    ii, jj, kk = np.meshgrid(
        np.arange(1, grid.nx + 1), np.arange(1, grid.ny + 1), np.arange(1, grid.nr + 1),
        indexing="ij",
    )
    xx, yy, rr = np.meshgrid(grid.xs, grid.ys, grid.rs, indexing="ij")
    blocks = []
    for f in fields:
        tcol = np.full(ii.size, f.time)
        blocks.append(
            np.column_stack([
                tcol, ii.ravel(), jj.ravel(), kk.ravel(),
                xx.ravel(), yy.ravel(), rr.ravel(), f.values.ravel(),
            ])
        )
    data = np.vstack(blocks)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,i,j,k,x,y,r,u\n")
        np.savetxt(
            fh, data,
            fmt=[FLOAT_FMT, "%d", "%d", "%d", FLOAT_FMT, FLOAT_FMT, FLOAT_FMT, FLOAT_FMT],
            delimiter=",", newline="\n",
        )


def read_fields_csv(path, grid: Grid3) -> list[DensityField]:
    df = pd.read_csv(path, float_precision="round_trip")
    fields = []
    for t, sub in df.groupby("t", sort=True):
        values = np.zeros((grid.nx, grid.ny, grid.nr))
        idx = (sub["i"].to_numpy() - 1, sub["j"].to_numpy() - 1, sub["k"].to_numpy() - 1)
        values[idx] = sub["u"].to_numpy()
        fields.append(DensityField(grid, values, time=float(t)))
    return fields


FV_DIAG_HEADER = "t,mass,shannon,rao,second_moment"
MICRO_DIAG_HEADER = "t,mass,count,second_moment"


def write_fv_diagnostics_csv(path, records: list[DiagnosticsRecord]) -> None:
    _write_table(
        path,
        FV_DIAG_HEADER,
        [
            [r.time for r in records],
            [r.total_mass for r in records],
            [r.shannon_entropy for r in records],
            [r.rao_functional for r in records],
            [r.second_moment for r in records],
        ],
        [FLOAT_FMT] * 5,
    )


def write_micro_diagnostics_csv(path, records: list[DiagnosticsRecord]) -> None:
    _write_table(
        path,
        MICRO_DIAG_HEADER,
        [
            [r.time for r in records],
            [r.total_mass for r in records],
            [r.particle_count for r in records],
            [r.second_moment for r in records],
        ],
        [FLOAT_FMT, FLOAT_FMT, "%d", FLOAT_FMT],
    )


def read_diagnostics_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def write_errors_csv(path, rows) -> None:
    """rows: iterables (t, comparand, e_tot, e_spatial, e_size)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,comparand,e_tot,e_spatial,e_size\n")
        for t, name, et, es, ez in rows:
            fh.write(f"{t:.17g},{name},{et:.17g},{es:.17g},{ez:.17g}\n")


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def make_manifest(scale: str, preset: str, config_dict: dict, seeds: list[int],
                  output_times: list[float], out_dir: str, version: str,
                  particle_cap: int | None = None) -> dict:
    return {
        "tool": "triscale",
        "version": version,
        "scale": scale,
        "preset": preset,
        "config": config_dict,
        "seeds": seeds,
        "output_times": list(output_times),
        "out_dir": os.path.abspath(out_dir),
        "particle_cap": particle_cap,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "flags": {},
    }
