"""End-to-end acceptance criteria 1-10, each reported as one PASS/FAIL line."""

import json
import os
import subprocess
import sys
import time

import numpy as np

from conftest import ACCEPTANCE_LINES
from sasaki.comparison import f_rie_vec, f_sas_vec, g_rie_vec, g_sas_vec
from sasaki.coupling import run_coupling, verify_bounds
from sasaki.geodesics import heis_mul, heisenberg_oracle, solve_bvp, unit_geodesic
from sasaki.jacobi import (
    expansion_check,
    field_on_geodesic,
    hessian_check,
    index_closed_form,
    index_quadrature,
    index_sum,
    model_field_for,
    model_jacobi,
    ode_residual,
)
from sasaki.models import _j_horizontal, make_model
from sasaki.transport import convergence_probe


def _record(num, ok, elapsed, limit, detail):
    within = limit is None or elapsed < limit
    status = "PASS" if ok and within else "FAIL"
    budget = "" if limit is None else f" (limit {limit:.0f}s)"
    line = f"[{status}] criterion {num}: {detail}; runtime {elapsed:.1f}s{budget}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok and within


def _all_models():
    return [
        ("heisenberg1", make_model("heisenberg", 1)),
        ("heisenberg2", make_model("heisenberg", 2)),
        ("cc+1", make_model("constant_curvature", 1, 1.0)),
        ("cc-1", make_model("constant_curvature", 1, -1.0)),
    ]


# --- 1: comparison functions against their defining log-derivatives -------------------


def _sc(k, t):
    if k > 0:
        q = np.sqrt(k)
        return np.sin(q * t) / q, np.cos(q * t)
    if k < 0:
        q = np.sqrt(-k)
        return np.sinh(q * t) / q, np.cosh(q * t)
    return t, np.ones_like(t)


def _log_defining(name, k, r):
    s, c = _sc(k, r)
    s2, c2 = _sc(k, r / 2)
    if name == "F_Rie":
        return np.log(np.abs(s))
    if name == "G_Rie":
        return 2 * np.log(np.abs(c2))
    if name == "F_Sas":
        val = r**4 / 12 if k == 0 else (2 - 2 * c - k * r * s) / k**2
        return np.log(np.abs(val))
    val = (r / 2) ** 3 / 3 if k == 0 else (s2 - r / 2 * c2) / abs(k)
    return 2 * np.log(np.abs(val))


def _fd5(f, r, h):
    return (f(r - 2 * h) - 8 * f(r - h) + 8 * f(r + h) - f(r + 2 * h)) / (12 * h)


def test_criterion_1_comparison_functions():
    t0 = time.perf_counter()
    funcs = {"F_Rie": f_rie_vec, "F_Sas": f_sas_vec, "G_Rie": g_rie_vec, "G_Sas": g_sas_vec}
    worst, g_neg, g_cap = 0.0, 0, 0
    for k in (-2.0, -1.0, 0.0, 1.0, 2.0):
        # stay inside the first pole of every function (pi / sqrt(k) is the nearest)
        rmax = 0.9 * np.pi / np.sqrt(k) if k > 0 else 3.0
        r = np.linspace(0.05, rmax, 50)
        for name, fn in funcs.items():
            fd = _fd5(lambda t: _log_defining(name, k, t), r, 1e-3)
            val = np.asarray(fn(r, k))
            # G_Rie(r, 0) vanishes identically; compare absolutely where the reference is zero
            scale = np.where(fd == 0.0, 1.0, np.abs(fd))
            worst = max(worst, float(np.max(np.abs(val - fd) / scale)))
        gs = np.asarray(g_sas_vec(r, k))
        g_neg += int(np.sum(gs < 0))
        if k >= 0:
            g_cap += int(np.sum(gs > 6 / r * (1 + 1e-12)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and g_neg == 0 and g_cap == 0
    assert _record(1, ok, elapsed, 1.0, f"max rel FD error {worst:.2e}, G_Sas<0 at {g_neg}, G_Sas>6/r at {g_cap}")


# --- 2: model Jacobi closed forms solve the model equations ---------------------------


def test_criterion_2_model_jacobi_residual():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for i in range(100):
        series = i % 5 == 0
        eps = 0.0 if i % 4 == 0 else rng.uniform(0.01, 1.0)
        h = rng.uniform(0.3, 1.0) if eps > 0 else 1.0
        v = np.sqrt((1 - h * h) / eps) if eps > 0 else rng.uniform(-2, 2)
        if series:
            K1, K2 = rng.uniform(-1e-8, 1e-8), rng.uniform(-1e-8, 1e-8)
        else:
            K1, K2 = rng.uniform(-2, 2), rng.uniform(-2, 2)
        fld = model_jacobi(rng.uniform(0.2, 1.5), eps, h, v, K1, K2, rng.normal(), rng.normal(),
                           rng.normal(size=2), rng.normal(size=2))
        worst = max(worst, ode_residual(fld))
    elapsed = time.perf_counter() - t0
    assert _record(2, worst <= 1e-6, elapsed, 5.0, f"max residual {worst:.2e} over 100 fields (20 near k=0)")


# --- 3: closed-form index vs quadrature -----------------------------------------------


def test_criterion_3_index_closed_form_vs_quadrature():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst, count = 0.0, 0
    for _, M in _all_models():
        for _ in range(5):
            eps = rng.uniform(0.05, 1.0)
            geo = unit_geodesic(M, eps, np.zeros(M.dim), rng.normal(size=M.dim) * 0.6, steps=128)
            e = geo.tangent[0][: M.n]
            e = e / np.linalg.norm(e)
            for _ in range(5):
                u = []
                for _ in range(2):
                    w = rng.normal(size=M.n)
                    for f in (e, _j_horizontal(e)):
                        w = w - (w @ f) * f
                    u.append(w)
                fld = model_field_for(M, geo, rng.normal(), rng.normal(), *u)
                Y, DY = field_on_geodesic(M, geo, fld)
                a, b = index_closed_form(fld, M, geo), index_quadrature(M, geo, Y, DY)
                worst = max(worst, abs(a - b) / max(abs(a), 1e-12))
                count += 1
    elapsed = time.perf_counter() - t0
    assert _record(3, worst <= 1e-4, elapsed, 30.0, f"max rel difference {worst:.2e} over {count} fields")


# --- 4: Heisenberg distance against the independent oracle ----------------------------


def test_criterion_4_heisenberg_distance():
    t0 = time.perf_counter()
    M = make_model("heisenberg", 1)
    rng = np.random.default_rng(4)
    pairs = []
    for i in range(20):
        x = rng.uniform(-1, 1, 3)
        if i % 4 == 0:
            # near-vertical: tiny horizontal displacement, order-one height
            dy = np.array([*(rng.normal(size=2) * 1e-3), rng.uniform(0.2, 1.0) * rng.choice([-1, 1])])
        else:
            dy = np.array([*rng.uniform(-1, 1, 2), rng.uniform(-0.5, 0.5)])
        pairs.append((x, heis_mul(x, dy)))
    worst = 0.0
    for x, y in pairs:
        worst = max(worst, abs(solve_bvp(M, 0.0, x, y).r - heisenberg_oracle(x, y)))
    d1 = solve_bvp(M, 0.0, np.zeros(3), [1.0, 0.0, 0.0]).r
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-3 and abs(d1 - 1.0) <= 1e-6
    assert _record(4, ok, elapsed, 60.0, f"max |bvp - oracle| {worst:.2e} on 20 pairs (5 near-vertical), d(0,(1,0,0))-1 = {d1 - 1:.1e}")


# --- 5: transport convergence ---------------------------------------------------------

TRANSPORT_FIXTURES = [
    ("heisenberg1", [1.0, 0.0, 0.05]),
    ("heisenberg2", [0.6, 0.3, -0.5, 0.4, 0.04]),
    ("cc+1", [0.8, -0.5, 0.03]),
    ("cc-1", [-0.7, 0.6, -0.04]),
    ("heisenberg1", [0.3, 0.9, 0.05]),
]


def test_criterion_5_transport_convergence():
    t0 = time.perf_counter()
    models = dict(_all_models())
    eps_list = [1.0, 0.1, 0.01, 0.001]
    p_ok = m_ok = True
    notes = []
    for key, y in TRANSPORT_FIXTURES:
        M = models[key]
        rows = convergence_probe(M, np.zeros(M.dim), y, eps_list)
        p = [row.p_diff for row in rows]
        m = [row.m_diff for row in rows]
        p_good = all(b < a for a, b in zip(p, p[1:])) and p[-1] < 1e-2
        m_good = all(b < a for a, b in zip(m, m[1:])) and m[-1] < 1e-2
        p_ok &= p_good
        m_ok &= m_good
        notes.append(f"{key} P_end={p[-1]:.1e} M=[{', '.join(f'{v:.0e}' for v in m)}]")
        print(key, y, "P:", p, "M:", m)
    elapsed = time.perf_counter() - t0
    detail = f"P strictly decreasing and < 1e-2: {p_ok}; M strictly decreasing and < 1e-2: {m_ok} ({'; '.join(notes)})"
    assert _record(5, p_ok and m_ok, elapsed, 60.0, detail)


# --- 6: index bound -------------------------------------------------------------------


def test_criterion_6_index_bound():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    worst, worst_bc = np.inf, 0.0
    per_model = {}
    for key, M in _all_models():
        lo = np.inf
        for _ in range(20):
            eps = rng.uniform(0.05, 1.0)
            y = np.append(rng.uniform(-0.5, 0.5, M.n), rng.uniform(-0.15, 0.15))
            rep = index_sum(M, eps, np.zeros(M.dim), y, steps=96)
            lo = min(lo, rep.slack)
            worst_bc = max(worst_bc, rep.details["bc_residual"])
        per_model[key] = lo
        worst = min(worst, lo)
    elapsed = time.perf_counter() - t0
    detail = "min slack " + ", ".join(f"{k} {v:.2e}" for k, v in per_model.items()) + f"; max bc residual {worst_bc:.1e}"
    assert _record(6, worst >= -1e-6, elapsed, 120.0, detail)


# --- 7: Hessian comparison ------------------------------------------------------------


def test_criterion_7_hessian():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    mins = {}
    for key, M in _all_models():
        for _ in range(10):
            eps = rng.uniform(0.1, 1.0)
            y = np.append(rng.uniform(-0.5, 0.5, M.n), rng.uniform(-0.1, 0.1))
            for rep in hessian_check(M, eps, np.zeros(M.dim), y, steps=96):
                d = rep.inputs["direction"]
                d = "w" if d.startswith("w") else d
                mins[d] = min(mins.get(d, np.inf), rep.slack)
    elapsed = time.perf_counter() - t0
    ok = all(v >= -1e-3 for v in mins.values())
    detail = "min slack " + ", ".join(f"{k} {v:.2e}" for k, v in mins.items())
    assert _record(7, ok, elapsed, 120.0, detail)


# --- 8: expansion ---------------------------------------------------------------------


def test_criterion_8_expansion():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    models = [M for _, M in _all_models()]
    beta_err, slack, lifted = 0.0, np.inf, np.inf
    bad = []
    for i in range(10):
        M = models[i % 4]
        y = np.append(rng.uniform(-0.5, 0.5, M.n), rng.uniform(-0.2, 0.2))
        p0 = np.append(rng.normal(size=M.n) * 0.5, 0.0)
        p1 = np.append(rng.normal(size=M.n) * 0.5, 0.0)
        rep, _ = expansion_check(M, np.zeros(M.dim), y, p0, p1)
        beta_err = max(beta_err, abs(rep.details["beta"] - rep.details["c1_minus_c0"]))
        if rep.slack < -1e-3:
            bad.append(i)
        slack = min(slack, rep.slack)
        lift, _ = expansion_check(M, np.zeros(M.dim), y, p0, p1, vertical_lift=True)
        lifted = min(lifted, lift.bound - lift.value)
    elapsed = time.perf_counter() - t0
    ok = beta_err <= 1e-3 and slack >= -1e-3
    detail = (f"max |beta - (c1 - c0)| {beta_err:.1e}; min RHS - alpha {slack:.2e} "
              f"(fixtures over tolerance: {bad}); with vertical lift min RHS - alpha {lifted:.1e}")
    assert _record(8, ok, elapsed, 120.0, detail)


# --- 9: coupling audit ----------------------------------------------------------------


def test_criterion_9_coupling_audit():
    t0 = time.perf_counter()
    M = make_model("heisenberg", 1)
    reps = {}
    for dt in (1e-4, 5e-5):
        stats = run_coupling(M, 1e-2, np.zeros(3), [1.0, 0.0, 0.0], 0.5, dt, 10_000, seed=2024)
        reps[dt] = verify_bounds(stats)
        print(dt, json.dumps({k: v for k, v in reps[dt].items() if k != "drift_table"}))
    elapsed = time.perf_counter() - t0
    a = reps[1e-4]
    frac, frac_half = a["violation_fraction"], reps[5e-5]["violation_fraction"]
    # equal zero fractions count as non-increasing
    decreasing = frac_half < frac or frac_half == frac == 0.0
    ok = a["drift_ok"] and a["variance_ok"] and a["violation_ok"] and decreasing
    detail = (f"drift CI99 upper {a['drift_ci99_upper']:.2e} <= 0: {a['drift_ok']}; variance ratio {a['variance_ratio']:.4f}; "
              f"violations {frac:.4f} (dt) -> {frac_half:.4f} (dt/2)")
    assert _record(9, ok, elapsed, 600.0, detail)


# --- 10: reproducibility --------------------------------------------------------------


def _cli(*args, threads="2"):
    env = dict(os.environ, SASAKI_THREADS=threads)
    out = subprocess.run([sys.executable, "-m", "sasaki.cli", *args], capture_output=True, text=True, env=env, check=True)
    return out.stdout


def test_criterion_10_reproducibility(tmp_path):
    t0 = time.perf_counter()
    st = [_cli("selftest", "--json") for _ in range(2)]
    couple = ["couple", "--paths", "3000", "--T", "0.02", "--dt", "1e-3", "--seed", "17", "--json"]
    runs = []
    for i in range(2):
        csv_path = tmp_path / f"rho{i}.csv"
        out = _cli(*couple, "--csv", str(csv_path))
        runs.append((out.replace(str(csv_path), ""), csv_path.read_text().replace(str(csv_path), "")))
    elapsed = time.perf_counter() - t0
    ok = st[0] == st[1] and runs[0] == runs[1]
    assert _record(10, ok, elapsed, None, f"selftest identical: {st[0] == st[1]}; couple identical: {runs[0] == runs[1]}")
