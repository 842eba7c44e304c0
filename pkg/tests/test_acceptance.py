"""Acceptance gate: every contract criterion at its stated tolerance.

Each test prints one `[criterion N] PASS/FAIL — detail` line (visible with
`pytest -s` or in the failure report).  Shared expensive runs live in
session-scoped fixtures.  Micro ensemble runs use delta_micro = 0.1 (a public
solver knob) to fit the time budget; all physical parameters are the
reference set.
"""
import math

import numpy as np
import pytest

from triscale.domain import (
    DensityField,
    ParticleEnsemble,
    SimConfig,
    SQRT2,
    build_grid,
)
from triscale import fvm, micro, observables as obs
from triscale.kernel import (
    KernelSpec,
    build_stencil,
    eval_k,
    eval_k_eps,
    gamma_big,
    grad_k,
    xi_macro,
    xi_meso,
)
from triscale.micro import BetaRate, beta

TIMES5 = (0.0, 4.0, 20.0, 60.0, 100.0)
ZERO_KERNEL = KernelSpec(gamma=lambda r: np.zeros_like(np.asarray(r, dtype=float)))
N_SEEDS = 6
MICRO_DELTA = 0.1


def _verdict(tag: str, ok: bool, detail: str) -> bool:
    print(f"[{tag}] {'PASS' if ok else 'FAIL'} — {detail}")
    return ok


# ----------------------------------------------------------------- fixtures


@pytest.fixture(scope="session")
def meso_case1():
    return fvm.run_meso(SimConfig(beta_bar=0.0), output_times=TIMES5)


@pytest.fixture(scope="session")
def macro_case1():
    return fvm.run_macro(SimConfig(beta_bar=0.0), output_times=TIMES5)


@pytest.fixture(scope="session")
def meso_case2():
    return fvm.run_meso(SimConfig(growth_g=0.0), output_times=TIMES5)


@pytest.fixture(scope="session")
def macro_case2_dense():
    times = tuple(float(t) for t in range(0, 21))
    return fvm.run_macro(SimConfig(growth_g=0.0, t_final=20.0), output_times=times)


@pytest.fixture(scope="session")
def micro_case1_runs():
    """Case-1 micro ensembles at three population sizes, N_SEEDS runs each."""
    out = {}
    for n0 in (100, 500, 2000):
        cfg = SimConfig(beta_bar=0.0, n0=n0, delta_micro=MICRO_DELTA)
        out[n0] = [
            micro.run_micro(cfg, run_index=i, output_times=TIMES5)
            for i in range(N_SEEDS)
        ]
    return out


@pytest.fixture(scope="session")
def micro_case2_runs():
    cfg = SimConfig(growth_g=0.0, n0=2000, delta_micro=MICRO_DELTA)
    return [
        micro.run_micro(cfg, run_index=i, output_times=TIMES5)
        for i in range(N_SEEDS)
    ]


@pytest.fixture(scope="session")
def case3_runs():
    micro_res = micro.run_micro(
        SimConfig(n0=2000, delta_micro=MICRO_DELTA), output_times=TIMES5
    )
    meso_res = fvm.run_meso(SimConfig(), output_times=TIMES5)
    macro_res = fvm.run_macro(SimConfig(), output_times=TIMES5)
    return micro_res, meso_res, macro_res


@pytest.fixture(scope="session")
def appendix_a_runs():
    cfg = SimConfig(growth_g=0.0, beta_bar=0.0)
    return (fvm.run_meso(cfg, output_times=(0.0, 100.0)),
            fvm.run_macro(cfg, output_times=(0.0, 100.0)))


# -------------------------------------------------- criterion 1: conservation


def test_criterion_1a_micro_count_constant(micro_case1_runs):
    ok = all(
        len({d.particle_count for d in res.diagnostics}) == 1
        for res in micro_case1_runs[2000]
    )
    assert _verdict("criterion 1a", ok,
                    "micro with no division: particle count constant")


def test_criterion_1b_division_conserves_squared_radii():
    rng_stream = micro.RngStream(123)
    cfg = SimConfig()
    n = 2000
    pos = np.random.default_rng(5).normal(size=(n, 2))
    radii = np.random.default_rng(6).uniform(0.2, 1.0, n)
    ens = ParticleEnsemble(0.0, pos, radii, np.arange(n))
    before = float(np.sum(ens.radii ** 2))
    out = micro.step_division(ens, 5.0, rng_stream, cfg)
    after = float(np.sum(out.radii ** 2))
    rel = abs(after - before) / before
    ok = out.count > n and rel <= 1e-12
    assert _verdict("criterion 1b", ok,
                    f"division events conserve sum r^2 (rel dev {rel:.2e}, "
                    f"{out.count - n} divisions)")


@pytest.mark.parametrize("runner", [fvm.run_meso, fvm.run_macro],
                         ids=["meso", "macro"])
def test_criterion_1c_mass_constant_500_steps(runner):
    # cfl_safety lowered so the growth CFL produces > 500 steps by t = 100
    cfg = SimConfig(beta_bar=0.0, cfl_safety=0.05)
    res = runner(cfg, output_times=(0.0, 100.0))
    masses = np.array([d.total_mass for d in res.diagnostics])
    steps = len(masses) - 1
    drift = float(np.max(np.abs(np.diff(masses))))
    ok = steps >= 500 and drift <= 1e-12
    assert _verdict("criterion 1c", ok,
                    f"{runner.__name__} mass per-step drift {drift:.2e} over "
                    f"{steps} steps")


def test_criterion_1d_positivity_full_case1(meso_case1, macro_case1):
    mins = [float(f.values.min()) for f in meso_case1.snapshots + macro_case1.snapshots]
    ok = min(mins) >= 0.0
    assert _verdict("criterion 1d", ok,
                    f"FV positivity over full Case-1 runs (min {min(mins):.2e})")


# ------------------------------------------------ criterion 2: heat oracles


def test_criterion_2_macro_heat_moment():
    cfg = SimConfig(x_min=-10.0, x_max=10.0, nx=40, nr=2,
                    growth_g=0.0, beta_bar=0.0, t_final=100.0)
    res = fvm.run_macro(cfg, output_times=(0.0, 100.0), spec=ZERO_KERNEL)
    ts = np.array([d.time for d in res.diagnostics])
    sm = np.array([d.second_moment for d in res.diagnostics])
    slope = float(np.polyfit(ts, sm, 1)[0])
    rel = abs(slope - 0.04) / 0.04
    ok = rel <= 0.02
    assert _verdict("criterion 2 (macro)", ok,
                    f"second-moment rate {slope:.5f} vs 4D = 0.04 ({rel:.2%})")


def test_criterion_2_micro_heat_variance():
    cfg = SimConfig(n0=5000, growth_g=0.0, beta_bar=0.0, t_final=50.0,
                    delta_micro=MICRO_DELTA)
    times = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0)
    res = micro.run_micro(cfg, output_times=times, spec=ZERO_KERNEL)
    start = res.snapshots[0][1].positions
    worst = 0.0
    for axis in range(2):
        var = [float(np.var(ens.positions[:, axis] - start[:, axis]))
               for _, ens in res.snapshots]
        slope = float(np.polyfit(times, var, 1)[0])
        worst = max(worst, abs(slope - 0.02) / 0.02)
    ok = worst <= 0.05
    assert _verdict("criterion 2 (micro)", ok,
                    f"per-axis displacement variance rate vs 2D = 0.02 "
                    f"(worst dev {worst:.2%})")


# ----------------------------------------------- criterion 3: kernel suite


def test_criterion_3_kernel_suite():
    rng = np.random.default_rng(42)
    # (i) gradient vs central finite differences
    worst_fd = 0.0
    h = 1e-6
    for _ in range(30):
        r, s = rng.uniform(0.2, 1.0, 2)
        x = rng.uniform(-3.0, 3.0, 2)
        g = grad_k(r, s, x)
        for axis in range(2):
            e = np.zeros(2)
            e[axis] = h
            fd = (eval_k(r, s, x + e) - eval_k(r, s, x - e)) / (2.0 * h)
            worst_fd = max(worst_fd, abs(float(g[axis]) - fd))
    ok_fd = worst_fd <= 1e-6

    # (ii) quadrature of K_eps equals rs for eps in {0.25, 0.5, 1}
    worst_q = 0.0
    for eps in (0.25, 0.5, 1.0):
        spec = KernelSpec(eps=eps)
        for r, s in ((0.2, 1.0), (0.6, 0.6), (0.35, 0.8)):
            sigma = math.sqrt(r * r + s * s) * eps
            half, n = 6.0 * sigma, 600
            step = 2.0 * half / n
            pts = -half + (np.arange(n) + 0.5) * step
            gx, gy = np.meshgrid(pts, pts, indexing="ij")
            q = float(np.sum(eval_k_eps(r, s, np.stack([gx, gy], axis=-1), spec))
                      * step * step)
            worst_q = max(worst_q, abs(q - r * s) / (r * s))
    ok_q = worst_q <= 1e-3

    # (iii) xi_meso equals xi_macro on uniform fields (interior cells)
    grid = build_grid(SimConfig(nx=64, nr=4))
    st = build_stencil(grid)
    profile = rng.uniform(0.5, 1.5, grid.nr)
    f = DensityField(grid, np.broadcast_to(profile, (64, 64, 4)).copy())
    xm, xM = xi_meso(f, st), xi_macro(f)
    inner = slice(20, 44)
    worst_u = float(np.max(np.abs(xm[inner, inner] - xM[inner, inner])
                           / np.abs(xM[inner, inner])))
    ok_u = worst_u <= 1e-3

    ok = ok_fd and ok_q and ok_u
    assert _verdict("criterion 3", ok,
                    f"grad FD {worst_fd:.1e}; K_eps quadrature {worst_q:.1e}; "
                    f"uniform meso-macro {worst_u:.1e}")


# ------------------------------------- criterion 4: fragmentation balance


def test_criterion_4_discrete_balance():
    cfg = SimConfig(growth_g=0.0)
    grid = build_grid(cfg)
    rng = np.random.default_rng(7)
    b = beta(grid.rs, BetaRate.from_config(cfg))
    worst = 0.0
    for _ in range(5):
        values = rng.uniform(size=(grid.nx, grid.ny, grid.nr))
        f = DensityField(grid, values)
        xi = rng.uniform(size=values.shape)
        out = fvm.rhs(f, xi, cfg)
        lhs = float(np.sum(out)) * grid.cell_volume
        expected = float(np.sum(values * b[None, None, :])) * grid.cell_volume
        worst = max(worst, abs(lhs - expected) / expected)
    ok = worst <= 1e-12
    assert _verdict("criterion 4 (discrete)", ok,
                    f"sum rhs*vol vs sum beta*u*vol, worst abs dev {worst:.2e}")


def test_criterion_4_micro_r2_pairing(micro_case2_runs):
    worst = 0.0
    for res in micro_case2_runs:
        vals = [obs.pair_test_function(ens, lambda r, x, y: r * r, n_scale=2000)
                for _, ens in res.snapshots]
        base = vals[0]
        worst = max(worst, max(abs(v - base) / base for v in vals))
    ok = worst <= 1e-10
    assert _verdict("criterion 4 (micro)", ok,
                    f"Case-2 pairing with phi=r^2 constant (rel dev {worst:.2e})")


# --------------------------------------- criterion 5: entropy dissipation


def test_criterion_5_entropy_dissipation(appendix_a_runs):
    details = []
    ok = True
    for name, res in zip(("meso", "macro"), appendix_a_runs):
        sh = np.array([d.shannon_entropy for d in res.diagnostics])
        rao = np.array([d.rao_functional for d in res.diagnostics])
        dsh = float(np.max(np.diff(sh)))
        drao = float(np.max(np.diff(rao)))
        ok = ok and dsh <= 1e-10 and drao <= 1e-8
        details.append(f"{name}: dShannon {dsh:.1e}, dRao {drao:.1e}")
    assert _verdict("criterion 5", ok, "; ".join(details))


# -------------------------------------------- criterion 6: reference trends


def test_criterion_6a_case1_top_bin_concentration(meso_case1, macro_case1):
    fracs = {}
    for name, res in (("meso", meso_case1), ("macro", macro_case1)):
        sm = obs.size_marginal(res.snapshots[-1])
        fracs[name] = float(sm[-1] / np.sum(sm))
    ok = all(v >= 0.99 for v in fracs.values())
    assert _verdict(
        "criterion 6a", ok,
        f"top-bin size-marginal mass at t=100: meso {fracs['meso']:.4f}, "
        f"macro {fracs['macro']:.4f} (required >= 0.99)")


def test_criterion_6b_case2_peak_migration(macro_case2_dense):
    grid = macro_case2_dense.grid
    target1, target2 = 1.0 / SQRT2, 0.5
    t_hit1 = None
    ok2 = False
    for f in macro_case2_dense.snapshots:
        if f.time == 0.0:
            continue
        sm = obs.size_marginal(f)
        peak_r = float(grid.rs[int(np.argmax(sm))])
        if t_hit1 is None and abs(peak_r - target1) <= grid.dr:
            t_hit1 = f.time
        if t_hit1 is not None and f.time > t_hit1:
            # a local maximum of the marginal within one bin of r_max / 2
            for k in range(1, grid.nr - 1):
                if (abs(grid.rs[k] - target2) <= grid.dr
                        and sm[k] > sm[k - 1] and sm[k] > sm[k + 1]):
                    ok2 = True
    ok = t_hit1 is not None and ok2
    assert _verdict(
        "criterion 6b", ok,
        f"size-marginal peak at r_max/sqrt(2) from t={t_hit1}, later local "
        f"peak near r_max/2: {ok2}")


def test_criterion_6c_error_decreases_with_n0(meso_case1, micro_case1_runs):
    grid = meso_case1.grid
    ref = meso_case1.snapshots[-1]
    errs = {}
    for n0, runs in micro_case1_runs.items():
        avg = micro.ensemble_average([r.snapshots for r in runs], grid, n0)
        errs[n0] = obs.rel_l1_errors(ref, avg[-1])[1]
    ok = errs[100] > errs[500] > errs[2000]
    assert _verdict(
        "criterion 6c", ok,
        "terminal micro-vs-meso E_spatial: "
        + ", ".join(f"N0={k}: {v:.4f}" for k, v in sorted(errs.items())))


def _case1_meso_macro_errors(meso_case1, macro_case1):
    return {
        f.time: obs.rel_l1_errors(f, g)[0]
        for f, g in zip(meso_case1.snapshots, macro_case1.snapshots)
    }


def test_criterion_6d_case1_error_magnitude(meso_case1, macro_case1):
    errs = _case1_meso_macro_errors(meso_case1, macro_case1)
    ok = errs[60.0] < 0.05
    assert _verdict(
        "criterion 6d (magnitude)", ok,
        f"meso-vs-macro E_tot at t=60: {errs[60.0]:.4f} (required < 0.05)")


def test_criterion_6d_case1_error_trend(meso_case1, macro_case1):
    errs = _case1_meso_macro_errors(meso_case1, macro_case1)
    ok = errs[60.0] <= errs[20.0] and errs[100.0] <= errs[60.0]
    assert _verdict(
        "criterion 6d (trend)", ok,
        f"meso-vs-macro E_tot non-increasing after the transient: "
        f"t=20 {errs[20.0]:.4f}, t=60 {errs[60.0]:.4f}, t=100 {errs[100.0]:.4f}")


def test_criterion_6e_case2_error_flat(meso_case2, micro_case2_runs):
    grid = meso_case2.grid
    avg = micro.ensemble_average([r.snapshots for r in micro_case2_runs], grid, 2000)
    by_time = {f.time: f for f in meso_case2.snapshots}
    errs = [obs.rel_l1_errors(by_time[f.time], f)[0] for f in avg if f.time > 0.0]
    diffs = np.diff(errs)
    ok = not bool(np.all(diffs > 0.0))
    assert _verdict(
        "criterion 6e", ok,
        "Case-2 micro-vs-meso E_tot no monotone increase: "
        + ", ".join(f"{e:.4f}" for e in errs))


def test_criterion_6f_case3_truncation(case3_runs):
    micro_res, _, _ = case3_runs
    ok = micro_res.truncated and micro_res.truncation_time is not None
    t_star = micro_res.truncation_time
    assert _verdict("criterion 6f (truncation)", ok,
                    f"Case-3 micro hits the particle cap at t={t_star}")


def test_criterion_6f_case3_mass_ordering(case3_runs):
    micro_res, meso_res, macro_res = case3_runs
    assert micro_res.truncated
    t_star = micro_res.truncation_time
    micro_mass = micro_res.snapshots[-1][1].count / 2000
    ok = True
    details = []
    for name, res in (("meso", meso_res), ("macro", macro_res)):
        ts = np.array([d.time for d in res.diagnostics])
        ms = np.array([d.total_mass for d in res.diagnostics])
        m = float(np.interp(t_star, ts, ms))
        ok = ok and m > micro_mass
        details.append(f"{name} {m:.3f}")
    assert _verdict(
        "criterion 6f (mass ordering)", ok,
        f"continuum mass at t={t_star:.2f}: " + ", ".join(details)
        + f" (required > micro {micro_mass:.3f})")


# ------------------------------------ criterion 7: localisation convergence


def test_criterion_7_localisation_convergence():
    cfg = SimConfig(nx=32, nr=8, init_support_s=6.0, growth_g=0.0,
                    beta_bar=0.0, t_final=20.0)
    macro_res = fvm.run_macro(cfg, output_times=(0.0, 20.0))
    ref = macro_res.snapshots[-1]
    errs = []
    for eps in (1.0, 0.5, 0.25, 0.125):
        meso_res = fvm.run_meso(cfg.with_overrides(eps=eps),
                                output_times=(0.0, 20.0))
        errs.append(obs.rel_l1_errors(ref, meso_res.snapshots[-1])[0])
    # below eps ~ dx the meso operator coincides with the macro one, so the
    # error saturates at roundoff; require monotone non-increasing plus an
    # overall strict decrease
    ok = all(a >= b for a, b in zip(errs, errs[1:])) and errs[0] > errs[-1]
    assert _verdict(
        "criterion 7", ok,
        "E_tot(meso_eps, macro) at eps 1, 0.5, 0.25, 0.125: "
        + ", ".join(f"{e:.2e}" for e in errs))
