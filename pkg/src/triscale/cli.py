"""Experiment orchestration: presets, run drivers for all three scales, the
compare pipeline and reporting.

Exit codes: 0 success, 1 config violations, 2 runtime invariant failures.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from . import __version__, fvm, io, micro, observables
from .domain import (ConfigError, SimConfig, build_grid, parse_config_text,
                     validate_config, _INT_FIELDS)
from .fvm import CflViolationError
from .micro import DEFAULT_OUTPUT_TIMES, DEFAULT_PARTICLE_CAP

OUTPUT_ROOT_ENV = "TRISCALE_OUTPUT_ROOT"

SCALES = ("micro", "meso", "macro")

PRESETS = {
    "case1-growth": {"beta_bar": 0.0},
    "case2-frag": {"growth_g": 0.0},
    "case3-both": {},
    "appendixA-none": {"growth_g": 0.0, "beta_bar": 0.0},
    "appendixA-noD": {"growth_g": 0.0, "beta_bar": 0.0, "diffusion_d": 0.0},
}


def preset_config(name: str, base: SimConfig | None = None) -> SimConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return (base or SimConfig()).with_overrides(**PRESETS[name])


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in fields(SimConfig):
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, dest=f.name, type=(int if f.name in _INT_FIELDS else float),
                            default=None, help=f"override config field {f.name}")


def _collect_overrides(args) -> dict:
    out = {}
    for f in fields(SimConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            out[f.name] = v
    return out


def _resolve_config(args, preset: str | None) -> SimConfig:
    """Defaults, then preset overrides, then the config file, then CLI flags."""
    config = SimConfig()
    if preset:
        config = preset_config(preset, config)
    if getattr(args, "config_file", None):
        with open(args.config_file, "r", encoding="utf-8") as fh:
            config = config.with_overrides(**parse_config_text(fh.read()))
    return config.with_overrides(**_collect_overrides(args))


def _parse_times(spec: str | None):
    if not spec:
        return DEFAULT_OUTPUT_TIMES
    return tuple(float(tok) for tok in spec.split(",") if tok.strip())


def _default_out_dir(scale: str, preset: str) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    return os.path.join(root, f"{preset}_{scale}")


def cmd_run(args) -> int:
    try:
        config = _resolve_config(args, args.preset)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    violations = validate_config(config)
    if violations:
        for v in violations:
            print(f"config violation: {v}", file=sys.stderr)
        return 1
    times = _parse_times(args.times)
    out_dir = args.out or _default_out_dir(args.scale, args.preset)
    os.makedirs(out_dir, exist_ok=True)
    seeds = [config.seed + i for i in range(config.n_runs)] if args.scale == "micro" else [config.seed]
    manifest = io.make_manifest(
        args.scale, args.preset, asdict(config), seeds, list(times), out_dir,
        __version__, particle_cap=args.particle_cap if args.scale == "micro" else None,
    )
    manifest_path = os.path.join(out_dir, "manifest.json")
    io.write_manifest(manifest_path, manifest)
    try:
        if args.scale == "micro":
            _run_micro_ensemble(config, times, out_dir, manifest, args.particle_cap)
        elif args.scale == "meso":
            result = fvm.run_meso(config, output_times=times)
            _write_fv_outputs(result, out_dir)
        else:
            result = fvm.run_macro(config, output_times=times)
            _write_fv_outputs(result, out_dir)
    except (CflViolationError, FloatingPointError, ValueError) as exc:
        print(f"runtime invariant failure: {exc}", file=sys.stderr)
        manifest["flags"]["failed"] = str(exc)
        io.write_manifest(manifest_path, manifest)
        return 2
    io.write_manifest(manifest_path, manifest)
    print(out_dir)
    return 0


def _write_fv_outputs(result, out_dir) -> None:
    io.write_fields_csv(os.path.join(out_dir, "fields.csv"), result.snapshots)
    io.write_fv_diagnostics_csv(os.path.join(out_dir, "diagnostics.csv"), result.diagnostics)


def _run_micro_ensemble(config, times, out_dir, manifest, particle_cap) -> None:
    grid = build_grid(config)
    results = []
    for i in range(config.n_runs):
        res = micro.run_micro(config, run_index=i, output_times=times,
                              particle_cap=particle_cap)
        run_dir = os.path.join(out_dir, f"run_{i:03d}")
        os.makedirs(run_dir, exist_ok=True)
        io.write_particles_csv(os.path.join(run_dir, "particles.csv"), res.snapshots)
        io.write_micro_diagnostics_csv(os.path.join(run_dir, "diagnostics.csv"), res.diagnostics)
        results.append(res)
        if res.truncated:
            manifest["flags"].setdefault("truncated_runs", {})[str(i)] = res.truncation_time
        if res.escaped:
            manifest["flags"].setdefault("escaped_particles", {})[str(i)] = res.escaped
    # average over the output times every run reached (truncation can shorten some)
    common = set(t for t, _ in results[0].snapshots)
    for res in results[1:]:
        common &= set(t for t, _ in res.snapshots)
    common_times = sorted(t for t in common if t in set(times))
    series = [[(t, e) for t, e in res.snapshots if t in common_times] for res in results]
    averaged = micro.ensemble_average(series, grid, config.n0)
    avg_dir = os.path.join(out_dir, "average")
    os.makedirs(avg_dir, exist_ok=True)
    io.write_fields_csv(os.path.join(avg_dir, "fields.csv"), averaged)


def _load_run_fields(run_dir):
    manifest = io.read_manifest(os.path.join(run_dir, "manifest.json"))
    config = SimConfig().with_overrides(**manifest["config"])
    grid = build_grid(config)
    if manifest["scale"] == "micro":
        path = os.path.join(run_dir, "average", "fields.csv")
    else:
        path = os.path.join(run_dir, "fields.csv")
    return manifest, grid, io.read_fields_csv(path, grid)


def cmd_compare(args) -> int:
    ref_manifest, ref_grid, ref_fields = _load_run_fields(args.reference)
    if ref_manifest["scale"] != "meso":
        print("compare: the reference run must be mesoscopic", file=sys.stderr)
        return 1
    ref_by_time = {f.time: f for f in ref_fields}
    rows = []
    for run_dir in args.runs:
        manifest, grid, fields_b = _load_run_fields(run_dir)
        if not grid.same_mesh(ref_grid):
            print(f"compare: grid mismatch for {run_dir}", file=sys.stderr)
            return 1
        name = f"{manifest['preset']}_{manifest['scale']}"
        for f in fields_b:
            if f.time not in ref_by_time:
                continue
            e_tot, e_spatial, e_size = observables.rel_l1_errors(ref_by_time[f.time], f)
            rows.append((f.time, name, e_tot, e_spatial, e_size))
    io.write_errors_csv(args.out, rows)
    print(args.out)
    return 0


def _check(name: str, ok: bool, lines: list) -> None:
    lines.append((name, "PASS" if ok else "FAIL"))


def cmd_report(args) -> int:
    run_dir = args.run_dir
    manifest_path = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        print(f"report: incomplete run directory {run_dir}", file=sys.stderr)
        return 1
    manifest = io.read_manifest(manifest_path)
    config = SimConfig().with_overrides(**manifest["config"])
    checks = []
    print(f"run: {manifest['preset']} / {manifest['scale']} (triscale {manifest['version']})")
    if manifest["scale"] == "micro":
        _report_micro(run_dir, manifest, config, checks)
    else:
        _report_fv(run_dir, manifest, config, checks)
    for flag, value in manifest.get("flags", {}).items():
        print(f"flag: {flag} = {value}")
    print("invariant checks:")
    for name, verdict in checks:
        print(f"  {name}: {verdict}")
    if args.figures:
        fig_dir = os.path.join(run_dir, "figures")
        os.makedirs(fig_dir, exist_ok=True)
        _render_figures(run_dir, manifest, config, fig_dir)
        print(f"figures written to {fig_dir}")
    return 0 if all(v == "PASS" for _, v in checks) else 2


def _report_micro(run_dir, manifest, config, checks) -> None:
    import pandas as pd

    frames = []
    for i in range(config.n_runs):
        path = os.path.join(run_dir, f"run_{i:03d}", "diagnostics.csv")
        if os.path.exists(path):
            df = io.read_diagnostics_csv(path)
            df["run"] = i
            frames.append(df)
    if not frames:
        raise FileNotFoundError("no per-run diagnostics found")
    df = pd.concat(frames)
    print(df.groupby("t")[["mass", "count", "second_moment"]].mean().to_string())
    ok_count = all(np.all(np.diff(sub["count"].to_numpy()) >= 0)
                   for _, sub in df.groupby("run"))
    _check("particle count non-decreasing", ok_count, checks)
    if config.beta_bar == 0.0:
        ok_const = all(sub["count"].nunique() == 1 for _, sub in df.groupby("run"))
        _check("particle count constant (no division)", ok_const, checks)
    truncated = manifest.get("flags", {}).get("truncated_runs")
    if truncated:
        for run, t in truncated.items():
            print(f"run {run} truncated at the particle cap, t = {t:.4f}")


def _report_fv(run_dir, manifest, config, checks) -> None:
    df = io.read_diagnostics_csv(os.path.join(run_dir, "diagnostics.csv"))
    sampled = df.iloc[:: max(1, len(df) // 10)]
    print(sampled.to_string(index=False))
    mass = df["mass"].to_numpy()
    if config.beta_bar == 0.0:
        _check("mass conservation", float(np.ptp(mass)) <= 1e-12 * max(1.0, mass[0]), checks)
    if config.beta_bar == 0.0 and config.growth_g == 0.0:
        sh = df["shannon"].to_numpy()
        _check("Shannon entropy non-increasing", bool(np.all(np.diff(sh) <= 1e-10)), checks)
        rao = df["rao"].to_numpy()
        _check("Rao functional non-increasing", bool(np.all(np.diff(rao) <= 1e-8)), checks)
    grid = build_grid(config)
    fields = io.read_fields_csv(os.path.join(run_dir, "fields.csv"), grid)
    _check("density nonnegative", all(float(f.values.min()) >= 0.0 for f in fields), checks)


def _render_figures(run_dir, manifest, config, fig_dir) -> None:
    from . import plots

    if manifest["scale"] == "micro":
        path = os.path.join(run_dir, "run_000", "diagnostics.csv")
        plots.plot_micro_diagnostics(io.read_diagnostics_csv(path),
                                     os.path.join(fig_dir, "diagnostics.png"))
        avg = os.path.join(run_dir, "average", "fields.csv")
        if os.path.exists(avg):
            grid = build_grid(config)
            plots.plot_field_snapshots(io.read_fields_csv(avg, grid), fig_dir)
    else:
        plots.plot_fv_diagnostics(
            io.read_diagnostics_csv(os.path.join(run_dir, "diagnostics.csv")),
            os.path.join(fig_dir, "diagnostics.png"),
        )
        grid = build_grid(config)
        plots.plot_field_snapshots(
            io.read_fields_csv(os.path.join(run_dir, "fields.csv"), grid), fig_dir
        )


def cmd_validate(args) -> int:
    try:
        config = _resolve_config(args, args.preset)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    violations = validate_config(config)
    if violations:
        for v in violations:
            print(f"config violation: {v}")
        return 1
    print("config OK")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="triscale",
                                     description="three-scale particle population simulator")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scale for a preset")
    p_run.add_argument("scale", choices=SCALES)
    p_run.add_argument("preset", choices=sorted(PRESETS))
    p_run.add_argument("--config", dest="config_file", default=None,
                       help="key = value config file")
    p_run.add_argument("--times", default=None, help="comma-separated output times")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--particle-cap", type=int, default=DEFAULT_PARTICLE_CAP)
    _add_config_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="relative L1 errors against a meso reference")
    p_cmp.add_argument("--reference", required=True, help="mesoscopic run directory")
    p_cmp.add_argument("--out", default="errors.csv")
    p_cmp.add_argument("runs", nargs="+", help="run directories to compare")
    p_cmp.set_defaults(func=cmd_compare)

    p_rep = sub.add_parser("report", help="summarize a run directory")
    p_rep.add_argument("run_dir")
    p_rep.add_argument("--figures", action="store_true", help="render PNG figures")
    p_rep.set_defaults(func=cmd_report)

    p_val = sub.add_parser("validate", help="validate a config")
    p_val.add_argument("--config", dest="config_file", default=None)
    p_val.add_argument("--preset", choices=sorted(PRESETS), default=None)
    _add_config_flags(p_val)
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
