"""Fast deterministic invariant checks across all modules (``sasaki selftest``)."""

from __future__ import annotations

import numpy as np

from . import comparison as cmp
from .coupling import run_coupling
from .geodesics import (
    geodesic_between,
    heis_mul,
    heisenberg_exp,
    heisenberg_log,
    heisenberg_oracle,
    solve_bvp,
)
from .jacobi import (
    field_on_geodesic,
    index_closed_form,
    index_quadrature,
    index_sum,
    model_field_for,
    model_jacobi,
    ode_residual,
)
from .models import make_model
from .transport import parallel_map


def _check(name, value, ok):
    return {"name": name, "value": float(value), "ok": bool(ok)}


def _models():
    return {
        "heisenberg1": make_model("heisenberg", 1),
        "heisenberg2": make_model("heisenberg", 2),
        "cc+1": make_model("constant_curvature", 1, 1.0),
        "cc-1": make_model("constant_curvature", 1, -1.0),
    }


def check_comparison():
    out = [
        _check("g_sas(3,0)=2", cmp.g_sas(3.0, 0.0), abs(cmp.g_sas(3.0, 0.0) - 2.0) < 1e-12),
        _check("f_sas(2,0)=2", cmp.f_sas(2.0, 0.0), abs(cmp.f_sas(2.0, 0.0) - 2.0) < 1e-12),
        _check("g_rie(1,-4)=2tanh1", cmp.g_rie(1.0, -4.0), abs(cmp.g_rie(1.0, -4.0) - 2 * np.tanh(1.0)) < 1e-12),
    ]
    worst = 0.0
    for fn in (cmp.f_rie, cmp.f_sas, cmp.g_rie, cmp.g_sas):
        for r in (0.3, 1.0, 2.5):
            v0 = fn(r, 0.0)
            worst = max(worst, abs(fn(r, 1e-9) - v0), abs(fn(r, -1e-9) - v0))
    out.append(_check("continuity at k=0", worst, worst < 1e-6))
    return out


def check_models():
    worst = max(max(m.verify_structure().values()) for m in _models().values())
    return [_check("structure identities", worst, worst < 1e-12)]


def check_geodesics():
    M = make_model("heisenberg", 1)
    d = solve_bvp(M, 0.0, np.zeros(3), [1.0, 0.0, 0.0]).r
    x, y = np.array([0.1, -0.2, 0.05]), np.array([0.6, 0.3, -0.2])
    r = solve_bvp(M, 0.0, x, y).r
    orc = heisenberg_oracle(x, y)
    p, _, _ = heisenberg_log(heis_mul(-x, y), 0.3)
    rt = np.abs(heisenberg_exp(p, 0.3) - heis_mul(-x, y)).max()
    return [
        _check("d(0,(1,0,0))=1", d, abs(d - 1.0) < 1e-6),
        _check("shooting vs oracle", abs(r - orc), abs(r - orc) < 1e-6),
        _check("closed-form exp/log roundtrip", rt, rt < 1e-12),
    ]


def check_transport():
    M = make_model("constant_curvature", 1, -1.0)
    eps = 0.5
    geo, _ = geodesic_between(M, eps, np.zeros(3), [0.4, 0.2, 0.1], steps=64)
    tm = parallel_map(M, geo)
    iso = tm.isometry_defect(M.gram(eps))
    tang = np.abs(tm.matrix @ geo.tangent[0] - geo.tangent[-1]).max()
    return [
        _check("P_eps isometry", iso, iso < 1e-12),
        _check("P_eps maps tangent to tangent", tang, tang < 1e-5),
    ]


def check_jacobi():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(5):
        u0, u1 = rng.standard_normal(2), rng.standard_normal(2)
        fld = model_jacobi(rng.uniform(0.3, 1.5), 0.0, 0.8, 0.6, rng.uniform(-1, 1), rng.uniform(-1, 1),
                           rng.standard_normal(), rng.standard_normal(), u0, u1)
        worst = max(worst, ode_residual(fld))
    out = [_check("model Jacobi residual", worst, worst < 1e-6)]
    M = make_model("constant_curvature", 1, 1.0)
    geo, _ = geodesic_between(M, 0.3, np.zeros(3), [0.3, -0.2, 0.15], steps=128)
    fld = model_field_for(M, geo, 0.4, -0.7, [0.2, 0.1], [-0.3, 0.5])
    Y, DY = field_on_geodesic(M, geo, fld)
    a, b = index_closed_form(fld, M, geo), index_quadrature(M, geo, Y, DY)
    rel = abs(a - b) / max(1.0, abs(a))
    out.append(_check("closed form vs quadrature", rel, rel < 1e-4))
    rep = index_sum(make_model("heisenberg", 2), 0.1, np.zeros(5), [0.3, -0.1, 0.2, 0.1, 0.05], steps=96)
    out.append(_check("index sum slack", rep.slack, rep.slack >= -1e-6))
    return out


def check_coupling():
    M = make_model("heisenberg", 1)
    a = run_coupling(M, 1e-2, np.zeros(3), [1.0, 0.0, 0.0], 0.01, 1e-3, 64, seed=5)
    b = run_coupling(M, 1e-2, np.zeros(3), [1.0, 0.0, 0.0], 0.01, 1e-3, 64, seed=5)
    same = np.array_equal(a.rho, b.rho) and a.drift_mean == b.drift_mean
    return [
        _check("coupling reproducible", float(same), same),
        _check("coupling initial rho", a.rho[0, 0], abs(a.rho[0, 0] - 1.0) < 1e-12),
    ]


SUITES = (check_comparison, check_models, check_geodesics, check_transport, check_jacobi, check_coupling)


def run_selftest() -> list[dict]:
    checks = []
    for suite in SUITES:
        checks.extend(suite())
    return checks
