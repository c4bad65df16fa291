"""Acceptance criteria 1-10.

Each test prints one ``criterion k: PASS/FAIL`` line (also collected in the
terminal summary) before asserting.
"""

import dataclasses
import filecmp
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import fsolve

from conftest import record
from rhb import cli
from rhb.assembly import MethodConfig, PhaseAnchor, build_hb_residual, build_time_domain_residual
from rhb.integrate import jacobi_constant, orbit_keeping, series_defect, settle_and_project
from rhb.solvers import (
    NewtonOptions,
    PhysicalityCriteria,
    branch_junctions,
    frequency_sweep,
    multistart,
    newton_solve,
    peak_amplitude,
    verify_report,
)
from rhb.spectral import (
    HarmonicBasis,
    build_grid,
    build_operators,
    eval_series,
    exact_poly_harmonics,
    predict_alias_entries,
    project,
    random_polynomial,
    resize_order,
    sample_poly,
)
from rhb.systems import (
    CRTBPParams,
    RayleighPlessetParams,
    crtbp_recast,
    crtbp_seed,
    crtbp_system,
    duffing_system,
    rayleigh_plesset_recast,
    rayleigh_plesset_system,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def ops(N, M, phi=1, omega=1.0):
    basis = HarmonicBasis(N, omega)
    return build_operators(basis, build_grid(basis, M), phi)


# ---------------------------------------------------------------------------
# 1-3: spectral identities


def test_c1_projection_identity():
    worst = 0.0
    for N in range(1, 33):
        for M in range(2 * N + 1, 6 * N + 1):
            o = ops(N, M)
            worst = max(worst, float(np.max(np.abs(o.E_plus @ o.E - np.eye(2 * N + 1)))))
    ok = worst < 1e-12
    record("1", ok, f"max |E+E - I| over N=1..32, M=2N+1..6N: {worst:.2e} (< 1e-12)")
    assert ok


def test_c2_aliasing_matrix_closed_form():
    worst, zero_ok, cases = 0.0, True, 0
    for phi in range(2, 6):
        for N in range(1, 9):
            for M in range(2 * N + 1, (phi + 1) * N + 4):
                EA = ops(N, M, phi).E_alias
                pred = predict_alias_entries(N, phi, M).toarray()
                worst = max(worst, float(np.max(np.abs(EA - pred))))
                size = float(np.max(np.abs(EA)))
                if M > (phi + 1) * N:
                    zero_ok &= size < 1e-12 and pred.sum() == 0 and not pred.any()
                else:
                    zero_ok &= size > 0.5 and pred.any()
                cases += 1
    ok = worst < 1e-10 and zero_ok
    record("2", ok, f"{cases} (phi, N, M) cases: predictor gap {worst:.2e}, zero iff M > (phi+1)N: {zero_ok}")
    assert ok


def test_c3_conditional_identity():
    rng = np.random.default_rng(2024)
    worst_gap = worst_dec = 0.0
    for phi in range(2, 6):
        for _ in range(200):
            N = int(rng.integers(1, 17))
            dim = int(rng.integers(1, 4))
            poly = random_polynomial(rng, dim, phi, terms=int(rng.integers(1, 6)), forcing=bool(rng.random() < 0.5))
            basis = HarmonicBasis(N, float(rng.uniform(0.3, 3.0)))
            x = rng.uniform(-1, 1, (dim, basis.size)) / (1.0 + np.arange(basis.size) // 2)
            h, h_high = exact_poly_harmonics(x, poly, basis, phi)
            h, h_high = np.ravel(h), np.ravel(h_high)
            scale = 1.0 + float(np.max(np.abs(h)))
            Ms = sorted({2 * N + 1, (phi + 1) * N, (phi + 1) * N + 1, (phi + 1) * N + 7,
                         int(rng.integers(2 * N + 1, (phi + 1) * N + 2))})
            for M in Ms:
                o = build_operators(basis, build_grid(basis, M), phi)
                proj = o.E_plus @ sample_poly(x, poly, basis, M)
                worst_dec = max(worst_dec, float(np.max(np.abs(proj - h - o.E_alias @ h_high))) / scale)
                if M == (phi + 1) * N + 1:
                    worst_gap = max(worst_gap, float(np.max(np.abs(proj - h))) / scale)
    ok = worst_gap <= 1e-10 and worst_dec <= 1e-10
    record("3", ok, f"800 cases: identity gap at M_R {worst_gap:.2e}, decomposition error {worst_dec:.2e} "
                    "(relative to 1 + |h|, <= 1e-10)")
    assert ok


# ---------------------------------------------------------------------------
# 4-6: Duffing


def test_c4_method_equivalence():
    d = duffing_system()
    rhb_worst, hdhb_dev, points = 0.0, 0.0, 0
    pert = np.random.default_rng(4)
    for N in (1, 3):
        factory = lambda w, N=N: build_time_domain_residual(d, MethodConfig("RHB", N, w))  # noqa: E731
        seed = np.zeros((2, 2 * N + 1))
        ms = multistart(factory(2.0), (-2, 2), 60, seed=0, criteria=None)
        seeds = [(0.5, seed), (3.0, seed)] + [(2.0, c.report.coeffs) for c in ms.clusters]
        branches = frequency_sweep(factory, (0.5, 3.0), 0.05, seeds)
        for br in branches:
            for p in br:
                hb = build_hb_residual(d, HarmonicBasis(N, p.omega))
                start = p.coeffs + 1e-3 * pert.standard_normal(p.coeffs.shape)
                ref = newton_solve(hb, start)
                assert ref.converged
                rhb_worst = max(rhb_worst, float(np.max(np.abs(ref.coeffs - p.coeffs))))
                hd = newton_solve(build_time_domain_residual(d, MethodConfig("HDHB", N, p.omega)), ref.coeffs)
                if hd.converged:
                    a_hd = peak_amplitude(hd.coeffs, hb.basis)[0]
                    a_hb = peak_amplitude(ref.coeffs, hb.basis)[0]
                    hdhb_dev = max(hdhb_dev, abs(a_hd - a_hb))
                points += 1
    ok = rhb_worst <= 1e-9 and hdhb_dev > 1e-3
    record("4", ok, f"{points} branch points (N=1,3): RHB vs HB {rhb_worst:.2e} (<= 1e-9), "
                    f"HDHB amplitude deviation {hdhb_dev:.3f} (> 1e-3)")
    assert ok


def duffing_shooting_oracle(c=0.1, k=1.0, alpha=1.0, F=1.0, omega=2.0, grid=9):
    """Distinct period-T orbits found by scipy shooting from a grid of initial states."""
    T = 2 * np.pi / omega

    def f(t, x):
        return [x[1], -c * x[1] - k * x[0] - alpha * x[0] ** 3 + F * np.sin(omega * t)]

    def pmap(x):
        return solve_ivp(f, (0, T), x, method="DOP853", rtol=1e-11, atol=1e-12).y[:, -1]

    orbits = []
    for x0 in np.linspace(-3, 3, grid):
        for v0 in np.linspace(-6, 6, grid):
            sol, _, ier, _ = fsolve(lambda s: pmap(s) - s, [x0, v0], full_output=True, xtol=1e-12)
            if ier == 1 and np.max(np.abs(pmap(sol) - sol)) < 1e-8:
                if not any(np.max(np.abs(sol - o)) < 1e-6 for o in orbits):
                    orbits.append(sol)
    return orbits


@pytest.mark.slow
def test_c5_nonphysical_statistics():
    K = len(duffing_shooting_oracle())
    d = duffing_system()
    crit = PhysicalityCriteria()
    rhb = multistart(build_time_domain_residual(d, MethodConfig("RHB", 3, 2.0)), (-2, 2), 1000, seed=1,
                     criteria=crit)
    hdhb = multistart(build_time_domain_residual(d, MethodConfig("HDHB", 3, 2.0)), (-2, 2), 1000, seed=1,
                      criteria=crit)
    rhb_phys = sum(c.report.classification == "physical" for c in rhb.clusters)
    hd_bad = sum(c.report.classification != "physical" for c in hdhb.clusters)
    ok = (len(rhb.clusters) == K and rhb_phys == K and len(hdhb.clusters) > K and hd_bad >= 1)
    record("5", ok, f"oracle K={K}; RHB {len(rhb.clusters)} clusters ({rhb_phys} physical); "
                    f"HDHB {len(hdhb.clusters)} clusters ({hd_bad} non-physical)")
    assert ok


def test_c6_collocation_ablation():
    d = duffing_system()
    N, w = 3, 0.8
    MR = 4 * N + 1
    ref = newton_solve(build_hb_residual(d, HarmonicBasis(N, w)), np.zeros((2, 2 * N + 1)))
    assert ref.converged
    rng = np.random.default_rng(6)
    errs = {}
    for M in range(MR - 1, MR + 20):
        res = build_time_domain_residual(d, MethodConfig("CUSTOM_M", N, w, M))
        start = ref.coeffs + 0.05 * rng.standard_normal(ref.coeffs.shape)
        rep = newton_solve(res, start)
        assert rep.converged and rep.iterations > 0
        errs[M] = float(np.max(np.abs(rep.coeffs - ref.coeffs)))
    above = [errs[M] for M in errs if M >= MR]
    drop = errs[MR - 1] / max(errs[MR], 1e-300)
    flat = max(above) - min(above)
    ok = drop >= 1e4 and flat < 1e-9
    record("6", ok, f"error at M={MR - 1}: {errs[MR - 1]:.2e}, at M={MR}: {errs[MR]:.2e} "
                    f"(drop {min(drop, 1e99):.1e} >= 1e4); variation for M >= {MR}: {flat:.2e} (< 1e-9)")
    assert ok


# ---------------------------------------------------------------------------
# 7: Rayleigh-Plesset ladder


@pytest.mark.slow
def test_c7_rayleigh_plesset_ladder():
    p = RayleighPlessetParams()
    direct, recast = rayleigh_plesset_system(p), rayleigh_plesset_recast(p)
    top = HarmonicBasis(80, p.omega)
    settled = settle_and_project(direct, [p.equilibrium_radius, 0.0], top, settle_periods=80)
    rows = []
    for N in (10, 20, 40, 80):
        basis = HarmonicBasis(N, p.omega)
        c2 = resize_order(settled, N)
        t = np.arange(8 * N + 1) * basis.period / (8 * N + 1)
        u = project(1.0 / eval_series(c2[0], basis, t), basis, t)
        res = build_time_domain_residual(recast, MethodConfig("RHB", N, p.omega))
        rep = newton_solve(res, np.vstack([c2, u]))
        verify_report(res, rep, PhysicalityCriteria(shooting_tol=None))
        m = rep.verification
        rows.append((N, rep.residual, m.period_return_error, m.defect_rms))
    res_ok = all(r[1] <= 1e-12 for r in rows)
    ret_ok = all(a[2] >= b[2] for a, b in zip(rows, rows[1:]))
    def_ok = all(a[3] >= b[3] for a, b in zip(rows, rows[1:]))
    ok = res_ok and ret_ok and def_ok
    table = "; ".join(f"N={n}: res {r:.1e} ret {e:.2e} defect {dd:.2e}" for n, r, e, dd in rows)
    record("7", ok, table)
    assert ok


# ---------------------------------------------------------------------------
# 8: CRTBP halo


@pytest.fixture(scope="module")
def halo_ladder():
    p = CRTBPParams()
    rec = crtbp_recast(p)
    anchor = PhaseAnchor(1)
    w = 1.9
    sols = {}
    z = crtbp_seed("halo", HarmonicBasis(10, w), (0.2, 0.1), p)
    for N in (10, 20, 30, 50):
        res = build_time_domain_residual(rec, MethodConfig("RHB", N, w), anchor=anchor)
        rep = newton_solve(res, resize_order(z, N))
        assert rep.converged, N
        sols[N] = (res, rep)
        z = rep.coeffs
    return p, sols


@pytest.mark.slow
def test_c8_halo_orbit(halo_ladder):
    p, sols = halo_ladder
    direct = crtbp_system(p)
    res50, rep50 = sols[50]
    b50 = res50.basis
    t = np.arange(4096) * b50.period / 4096
    C = jacobi_constant(eval_series(rep50.coeffs[:6], b50, t), p.mu)
    jac = float((C.max() - C.min()) / abs(C.mean()))
    k10 = orbit_keeping(direct, sols[10][1].coeffs[:6], sols[10][0].basis)
    k50 = orbit_keeping(direct, rep50.coeffs[:6], b50)
    ok = jac < 1e-6 and k50.periods_maintained > k10.periods_maintained
    record("8", ok, f"Jacobi variation at N=50 {jac:.1e} (< 1e-6); periods maintained N=10 "
                    f"{k10.periods_maintained:.2f} ({k10.section_crossings} crossings), N=50 "
                    f"{k50.periods_maintained:.2f} ({k50.section_crossings} crossings)")
    assert ok


@pytest.mark.slow
def test_c8_aft_on_unrecast_field(halo_ladder):
    """AFT-style collocation of the non-polynomial field versus recast RHB.

    Expected to fail: both routes reach the same defect (see notes).
    """
    p, sols = halo_ladder
    direct = crtbp_system(p)
    N = 50
    res_rhb, rep_rhb = sols[N]
    M = 2 * 5 * N + 1
    res_aft = build_time_domain_residual(direct, MethodConfig("CUSTOM_M", N, 1.9, M), anchor=PhaseAnchor(1))
    rep_aft = newton_solve(res_aft, rep_rhb.coeffs[:6])
    assert rep_aft.converged
    d_rhb, _ = series_defect(direct, rep_rhb.coeffs[:6], res_rhb.basis)
    d_aft, _ = series_defect(direct, rep_aft.coeffs, res_aft.basis)
    ratio = d_aft / d_rhb
    ok = ratio >= 10.0
    record("8b", ok, f"AFT (M={M}) defect {d_aft:.2e} vs recast RHB {d_rhb:.2e}: ratio {ratio:.2f} (>= 10)")
    assert ok


# ---------------------------------------------------------------------------
# 9: CRTBP family sweep


@pytest.mark.slow
def test_c9_crtbp_family_sweep():
    cfg = cli.load_config("sweep", CONFIGS / "crtbp_sweep.ini")
    _, branches = cli.run_sweep(cfg)
    zmax = [max(pt.amplitude[2] for pt in br) for br in branches]
    hits = []
    for i, j, w, dist in branch_junctions(branches, 0.05, coords=[0, 1]):
        spatial = [k for k in (i, j) if zmax[k] > 1e-3]
        planar = [k for k in (i, j) if zmax[k] < 1e-8]
        if len(spatial) == 1 and len(planar) == 1:
            hits.append(w)
    near = [w for w in hits if abs(w - 1.84) <= 0.05]
    ok = len(branches) >= 4 and bool(near)
    record("9", ok, f"{len(branches)} branches; halo/planar junctions at {[round(w, 4) for w in hits]} "
                    "(need one at 1.84 +/- 0.05)")
    assert ok


# ---------------------------------------------------------------------------
# 10: determinism


RUNS = {
    "aliasing": "[aliasing]\nN = 3\nphi = 3\n",
    "identity-check": "[identity]\nN = 4\nphi = 3\ncases = 20\nseed = 3\n",
    "solve": "[system]\nname = duffing\n\n[method]\nmode = HDHB\norder = 3\nomega = 2.0\n\n"
             "[initial]\nkind = coefficients\nvalues = 0, 2, 0, 0, 0, 4\n",
    "montecarlo": "[system]\nname = duffing\n\n[method]\nmode = RHB\norder = 2\nomega = 2.0\n\n"
                  "[montecarlo]\ntrials = 40\nbounds = -2, 2\nseed = 5\n",
    "sweep": "[system]\nname = duffing\n\n[method]\nmode = RHB\norder = 2\n\n"
             "[sweep]\nomega_min = 0.5\nomega_max = 1.0\nstep = 0.1\nseed_omegas = 0.5\n",
    "propagate": "[system]\nname = crtbp\n\n[method]\nmode = CUSTOM_M\norder = 1\nM = 3\nomega = 1.9\n\n"
                 "[initial]\nkind = state\nstate = 1.17, 0, 0, 0, 0.05, 0\n\n[propagate]\nperiods = 1\n",
}


def test_c10_determinism(tmp_path):
    mismatched = []
    for command, text in RUNS.items():
        conf = tmp_path / f"{command}.ini"
        conf.write_text(text)
        outs = []
        for k, threads in enumerate(("1", "1", "2")):
            out = tmp_path / f"{command}_{k}"
            code = cli.main([command, "--config", str(conf), "--out", str(out), "--threads", threads])
            assert code == 0, (command, code)
            outs.append(out)
        names = sorted(p.name for p in outs[0].iterdir())
        assert names
        for other in outs[1:]:
            assert sorted(p.name for p in other.iterdir()) == names
            _, bad, errors = filecmp.cmpfiles(outs[0], other, names, shallow=False)
            mismatched += [f"{command}/{n}" for n in bad + errors]
    ok = not mismatched
    record("10", ok, f"{len(RUNS)} commands run three times (1, 1 and 2 threads): "
                     f"{'byte-identical' if ok else 'differs: ' + ', '.join(mismatched)}")
    assert ok
