"""Acceptance criteria, one PASS/FAIL line each at the stated tolerances.

Reproduction numbers (N=75 cavity, d=15 reduced basis, gate schedules) are
computed here from scratch; the expensive inputs are shared session fixtures.
"""
import time

import numpy as np
import pytest

from kerrlogic import dynamics as dy
from kerrlogic import experiments as ex
from kerrlogic import gates as gt
from kerrlogic import reduction as rd
from kerrlogic.fock import SpaceDescriptor, annihilation, density_defects

from conftest import ACCEPTANCE_LINES

ALPHA = ex.ALPHA
SQRT2 = np.sqrt(2.0)
EPS_GRID = np.round(np.arange(0.0, 40.0 + 1e-9, 0.5), 12)
STATE_TOL = 1e-10


def report(label: str, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="session")
def basis75():
    t0 = time.perf_counter()
    b = ex.jade_basis(75, 15, ALPHA)
    b.info["seconds"] = time.perf_counter() - t0
    return b


@pytest.fixture(scope="session")
def sweeps(basis75):
    full = ex.steady_sweep(gt.full_cavity(75), EPS_GRID)
    red = ex.steady_sweep(ex.reduced_cavity(basis75), EPS_GRID)
    return full, red


@pytest.fixture(scope="session")
def fidelity_curves(basis75):
    grid = list(range(5, 76, 5))
    return {eps: ex.fidelity_curve(basis75, eps, grid) for eps in (SQRT2 * ALPHA, ALPHA / SQRT2)}


# -- 1 ----------------------------------------------------------------------------

def test_c01_algebra_oracle():
    t0 = time.perf_counter()
    worst = {}
    for kind, N in (("and", 10), ("not", 10), ("latch", 6)):
        worst[kind] = gt.check_oracle(kind, N, n_samples=10, seed=2024)
    dt = time.perf_counter() - t0
    ok = all(w["dS"] <= 1e-14 and w["dL"] <= 1e-9 and w["dH"] <= 1e-9 for w in worst.values()) and dt < 60
    detail = "; ".join(f"{k} dS={w['dS']:.1e} dL={w['dL']:.1e} dH={w['dH']:.1e}" for k, w in worst.items())
    report("C1 composed SLH = closed forms (AND/NOT N=10, latch N=6)", ok, f"{detail}; {dt:.1f} s")


# -- 2 ----------------------------------------------------------------------------

def test_c02_threshold(sweeps):
    full, _ = sweeps
    lo, hi, slope = ex.max_slope_interval(full["eps"], full["transmitted"])
    ok = 24 <= lo and hi <= 28
    report("C2 max slope of |<eta_trans>| in eps [24, 28] (N=75)", ok, f"[{lo}, {hi}], slope {slope:.3g}")


# -- 3 ----------------------------------------------------------------------------

def test_c03_reduced_steady_accuracy(sweeps):
    full, red = sweeps
    m = (EPS_GRID > 0) & (EPS_GRID <= SQRT2 * ALPHA + 1e-9)  # eps = 0 is 0/0
    rel = {k: ex.relative_deviation(full[k][m], red[k][m]) for k in ("transmitted", "reflected")}
    worst = {k: float(np.nanmax(v)) for k, v in rel.items()}
    at = {k: float(EPS_GRID[m][np.nanargmax(v)]) for k, v in rel.items()}
    ok = max(worst.values()) <= 0.05
    report("C3 reduced d=15 vs full steady outputs, max rel. dev <= 5% on (0, sqrt2 alpha]", ok,
           f"trans {worst['transmitted']:.3f} (eps={at['transmitted']}), "
           f"refl {worst['reflected']:.3f} (eps={at['reflected']})")


# -- 4 ----------------------------------------------------------------------------

def test_c04a_fidelity_jade_high_drive(fidelity_curves):
    c = fidelity_curves[SQRT2 * ALPHA]
    f = float(c["jade"][list(c["d"]).index(15)])
    report("C4a JADE fidelity at d=15, eps=sqrt2 alpha >= 0.99", f >= 0.99, f"F = {f:.5f}")


def test_c04b_fidelity_jade_low_drive(fidelity_curves):
    c = fidelity_curves[ALPHA / SQRT2]
    f = float(c["jade"][list(c["d"]).index(10)])
    report("C4b JADE fidelity at d=10, eps=alpha/sqrt2 >= 0.99", f >= 0.99, f"F = {f:.5f}")


def test_c04c_fidelity_fock_baseline(fidelity_curves):
    c = fidelity_curves[SQRT2 * ALPHA]
    reached = [int(d) for d, f in zip(c["d"], c["fock"]) if f >= 0.99]
    first = reached[0] if reached else None
    f15 = float(c["fock"][list(c["d"]).index(15)])
    j15 = float(c["jade"][list(c["d"]).index(15)])
    ok = first is not None and first >= 55 and f15 < j15
    report("C4c Fock truncation first reaches F >= 0.99 only for d >= 55 (eps=sqrt2 alpha)", ok,
           f"first d = {first}; F_fock(15) = {f15:.4f} < F_jade(15) = {j15:.4f}")


# -- 5-7: gates ------------------------------------------------------------------

def _gate_run(kind, basis, n_traj=100, seed=0, single=None, dt=0.05):
    single = single if single is not None else ex.reduced_cavity(basis)
    setup = ex.gate_setup(kind, single, basis=basis)
    sched = ex.gate_schedule(kind)
    grid = np.round(np.arange(0.0, sched.t_end + 1e-9, dt), 12)
    t0 = time.perf_counter()
    series = ex.run_gate(setup, sched, grid, "mcwf", dy.TrajectoryConfig(n_traj, seed=seed))
    return series, sched, time.perf_counter() - t0


@pytest.mark.slow
def test_c05_and_gate(basis75):
    series, sched, dt = _gate_run("and", basis75)
    plateaus = ex.segment_plateaus(series, "eta", sched)
    high = [v for (a, b, lv), (_, _, v) in zip(sched.segments, plateaus) if lv["xi1"] != 0 and lv["xi2"] != 0]
    low = [v for (a, b, lv), (_, _, v) in zip(sched.segments, plateaus) if not (lv["xi1"] != 0 and lv["xi2"] != 0)]
    ok = all(abs(v - 31) <= 0.15 * 31 for v in high) and all(v < 3 for v in low)
    report("C5 AND (d=15, 100 traj): HIGH-HIGH within 31 +/- 15%, LOW < 3", ok,
           f"HIGH {np.round(high, 2).tolist()}, LOW {np.round(low, 3).tolist()}; {dt:.0f} s")


@pytest.mark.slow
def test_c06_not_gate(basis75):
    series, sched, dt = _gate_run("not", basis75)
    plateaus = ex.segment_plateaus(series, "eta", sched)
    low_in = [v for (_, _, lv), (_, _, v) in zip(sched.segments, plateaus) if lv["xi"] == 0]
    high_in = [v for (_, _, lv), (_, _, v) in zip(sched.segments, plateaus) if lv["xi"] != 0]
    # "materially suppressed": below a fifth of the target HIGH output
    ok = all(abs(v - 22.63) <= 0.15 * 22.63 for v in low_in) and all(v < 0.2 * 22.63 for v in high_in)
    report("C6 NOT (d=15, 100 traj): xi LOW -> 22.63 +/- 15%, xi HIGH suppressed (< 4.5)", ok,
           f"xi LOW {np.round(low_in, 3).tolist()}, xi HIGH {np.round(high_in, 3).tolist()}; {dt:.0f} s")


def _latch_verdict(series, sched):
    na = dict(((a, b), v) for a, b, v in ex.segment_plateaus(series, "n_a", sched, magnitude=False))
    nb = dict(((a, b), v) for a, b, v in ex.segment_plateaus(series, "n_b", sched, magnitude=False))
    checks, prev = [], None
    for a, b, lv in sched.segments:
        A, B = na[(a, b)], nb[(a, b)]
        s_bar, r_bar = lv["S_bar"], lv["R_bar"]
        if s_bar == 0 and r_bar != 0:  # SET
            ok = A < 5 and abs(B - 35) <= 0.2 * 35
            prev = "b"
        elif r_bar == 0 and s_bar != 0:  # RESET
            ok = B < 5 and abs(A - 35) <= 0.2 * 35
            prev = "a"
        else:  # HOLD keeps the ordering of the previous state
            ok = prev is not None and ((A < B) if prev == "b" else (A > B))
        checks.append((a, b, round(A, 2), round(B, 2), ok))
    return all(c[-1] for c in checks), checks


@pytest.mark.slow
def test_c07_latch_reduced(basis75):
    series, sched, dt = _gate_run("latch", basis75)
    ok, checks = _latch_verdict(series, sched)
    report("C7a NAND latch (d=15 per mode, 100 traj): SET/RESET/HOLD photon numbers", ok,
           f"(t0, t1, <a*a>, <b*b>, ok) {checks}; {dt:.0f} s")


@pytest.mark.slow
def test_c07_latch_full_n40():
    # 1600-dimensional; 25 trajectories keep this near half an hour on one core
    series, sched, dt = _gate_run("latch", None, n_traj=25, single=gt.full_cavity(40))
    ok, checks = _latch_verdict(series, sched)
    report("C7b NAND latch full model, N=40 per mode (25 traj)", ok,
           f"(t0, t1, <a*a>, <b*b>, ok) {checks}; {dt:.0f} s")


# -- 8 ----------------------------------------------------------------------------

def test_c08_mcwf_vs_master():
    N = 10
    G = gt.build_driven_cavity(gt.full_cavity(N))
    sched = dy.DriveSchedule.constant({"epsilon": 5.0}, 1.0)
    grid = np.linspace(0.0, 1.0, 41)
    obs = [dy.Observable("a", annihilation(SpaceDescriptor((N,))))]
    vac = np.eye(N)[0].astype(complex)
    me = dy.master_evolve(vac, G, sched, grid, obs)
    mc = dy.mcwf_ensemble(vac, G, sched, grid, dy.TrajectoryConfig(500, seed=1), obs)
    diff = np.abs(np.abs(mc["a"]) - np.abs(me["a"]))
    se = mc.err("a")
    # where every trajectory agrees (t = 0) the standard error vanishes; require exact agreement there
    exact = se == 0
    z = diff[~exact] / se[~exact]
    ok = bool(np.all(z <= 3) and np.all(diff[exact] <= 1e-12))
    report("C8a MCWF (500 traj) vs master equation, |<a>| within 3 SE pointwise (N=10, eps=5)", ok,
           f"max z = {z.max():.2f} over {len(z)} points; zero-SE points {int(exact.sum())} exact")


def test_c08_steady_vs_long_time():
    N = 10
    G = gt.build_driven_cavity(gt.full_cavity(N))
    rho_ss = dy.steady_state_slh(G, {"epsilon": 2.0})
    vac = np.eye(N)[0].astype(complex)
    out = dy.master_evolve(vac, G, dy.DriveSchedule.constant({"epsilon": 2.0}, 4.0), [0.0, 4.0])
    td = rd.trace_distance(out.final_state, rho_ss)
    report("C8b steady_state vs long-time master_evolve, trace distance <= 1e-6", td <= 1e-6, f"{td:.2e}")


# -- 9 ----------------------------------------------------------------------------

def test_c09_jade_properties(basis75):
    T = basis75.T
    unit = float(np.abs(T.conj().T @ T - np.eye(75)).max())
    hist = np.array(basis75.info["off_history"])
    mono = bool(np.all(np.diff(hist) <= 0))
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 30))
        q, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
        mats = [q @ np.diag(rng.normal(size=n)) @ q.conj().T for _ in range(2)]
        res = rd.jade(mats)
        worst = max(worst, res.off_history[-1] / sum(np.linalg.norm(m) ** 2 for m in mats))
    ok = unit <= 1e-10 and mono and worst <= 1e-18
    report("C9 JADE: T unitary, exact on commuting pairs, monotone off(.) at N=75", ok,
           f"|T*T - I| = {unit:.1e}; commuting off/norm^2 <= {worst:.1e}; "
           f"off {hist[0]:.3g} -> {hist[-1]:.3g} over {len(hist) - 1} sweeps, monotone={mono}; "
           f"{basis75.info['seconds']:.1f} s")


# -- 10 ---------------------------------------------------------------------------

def test_c10_state_validity(basis75):
    states = {}
    full = gt.full_cavity(75)
    red = ex.reduced_cavity(basis75)
    for eps in (0.0, ALPHA / SQRT2, ALPHA, SQRT2 * ALPHA, 40.0):
        states[f"full ss eps={eps:.3g}"] = ex.cavity_steady_state(full, eps)
        r = ex.cavity_steady_state(red, eps)
        states[f"reduced ss eps={eps:.3g}"] = r
        states[f"embedded eps={eps:.3g}"] = rd.embed_jade_state(r, basis75)
        fb = rd.fock_truncation_basis(75, 15)
        states[f"fock-embedded eps={eps:.3g}"] = rd.embed_fock_state(
            ex.cavity_steady_state(ex.reduced_cavity(fb), eps), 15, 75)
    N = 12
    G = gt.build_driven_cavity(gt.full_cavity(N))
    sched = dy.DriveSchedule([(0, 0.5, {"epsilon": 0}), (0.5, 2.0, {"epsilon": 6.0})])
    out = dy.master_evolve(np.eye(N)[0], G, sched, np.linspace(0, 2, 21), keep_states=True)
    for t, r in zip(out.times, out.states):
        states[f"master t={t:.2f}"] = r
    states["master final"] = out.final_state
    bad = []
    worst = np.zeros(3)
    for name, rho in states.items():
        tr, herm, mineig = density_defects(rho)
        worst = np.maximum(worst, [tr, herm, -mineig])
        if tr > STATE_TOL or herm > STATE_TOL or mineig < -STATE_TOL:
            bad.append(name)
    report("C10 reported density matrices: trace, Hermiticity, eigenvalues within 1e-10", not bad,
           f"{len(states)} states; worst trace {worst[0]:.1e}, herm {worst[1]:.1e}, "
           f"neg eig {max(worst[2], 0):.1e}; failing {bad[:5]}")
