"""Monte-Carlo coupling of two horizontal Brownian motions.

The first motion is a geodesic random walk driven by ``dB``; the second is
driven by the same increment pushed through the parallel map ``P_eps`` of the
current minimising geodesic.  Along each path we record ``rho = d_eps(x, y)``
and audit it against the drift bound

    E[d rho] <= (G_Sas(rho, K1) + (n - 2) G_Rie(rho, K2)) dt

and the integrated bound of :func:`corollary_bound`.  Paths are absorbed when
the pair approaches the cut locus.

Two engines are provided.  :func:`coupled_step` is the general step built on
the shooting solver and the transport ODE.  On the Heisenberg groups
:func:`run_coupling` uses closed forms instead: only the relative element
``q = x^{-1} y`` matters, the frame never rotates (the connection is flat
along horizontal steps) and ``P_eps`` acts on horizontal vectors as
multiplication by ``exp(-i lam)``, where ``lam`` is the vertical component of
the time-one covector from ``0`` to ``q``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .comparison import g_rie_vec, g_sas_vec
from .errors import DegeneratePair, NumericError
from .geodesics import flow_endpoint, hamiltonian_flow, heis_mul, heisenberg_log, solve_bvp
from .models import ModelSpace, as_array, curvature_constants
from .transport import transport_matrix

__all__ = [
    "CouplingState",
    "CouplingStats",
    "coupled_step",
    "run_coupling",
    "verify_bounds",
    "corollary_bound",
    "initial_state",
    "path_generators",
]

DELTA_DT = 0.05
CUT_MARGIN = 0.05
BLOCK = 2048
CHUNK = 256
Z99 = 2.5758293035489004


# --- bounds -----------------------------------------------------------------------


def corollary_bound(d, k2, n, t):
    """Upper bound for ``rho_t`` when ``k1 = 0`` and ``k2 <= 0``.

    ``sqrt(d^2 e^{a t} + 12 (e^{a t} - 1) / a)`` with ``a = (n - 2) |k2|``;
    for ``a = 0`` this is ``sqrt(d^2 + 12 t)``.
    """
    d = np.asarray(d, dtype=float)
    t = np.asarray(t, dtype=float)
    a = (n - 2) * abs(float(k2))
    if a == 0.0:
        out = np.sqrt(d * d + 12.0 * t)
    else:
        out = np.sqrt(d * d * np.exp(a * t) + 12.0 * np.expm1(a * t) / a)
    return float(out) if out.ndim == 0 else out


def drift_bound(rho, h, v, k1, k2, n):
    """``G_Sas(rho, K1) + (n - 2) G_Rie(rho, K2)``, ``nan`` past a pole."""
    rho = np.asarray(rho, dtype=float)
    K1 = k1 * h * h + v * v
    K2 = k2 * h * h + 0.25 * v * v
    out = np.asarray(g_sas_vec(rho, K1), dtype=float)
    if n > 2:
        out = out + (n - 2) * np.asarray(g_rie_vec(rho, K2), dtype=float)
    return out


def _k_bounds(model: ModelSpace):
    if model.family == "heisenberg":
        return 0.0, 0.0
    cb = curvature_constants(model)
    return cb.k1, cb.k2


# --- single generic step -----------------------------------------------------------


@dataclass
class CouplingState:
    t: float
    x: np.ndarray
    y: np.ndarray
    frame_x: np.ndarray
    rho: float
    stopped: bool = False
    stop_reason: str | None = None
    p: np.ndarray | None = field(default=None, repr=False)

    def frame_defect(self) -> float:
        F = self.frame_x
        return float(np.abs(F.T @ F - np.eye(F.shape[1])).max())


def initial_state(model: ModelSpace, eps: float, x, y, steps: int = 64) -> CouplingState:
    x = as_array(x, model.dim).astype(float)
    y = as_array(y, model.dim).astype(float)
    if np.linalg.norm(x - y) < 1e-14:
        raise DegeneratePair("x and y coincide; the coupling needs rho > 0")
    sol = solve_bvp(model, eps, x, y, steps=steps)
    frame = np.eye(model.dim)[:, : model.n]
    return CouplingState(0.0, x, y, frame, sol.r, p=sol.p)


def coupled_step(model: ModelSpace, eps: float, state: CouplingState, dt: float, rng, steps: int = 64) -> CouplingState:
    """Advance the pair by one geodesic random-walk step of size ``dt``.

    ``rng`` is a ``numpy.random.Generator``; the step draws exactly ``n``
    standard normals from it.
    """
    if state.stopped:
        raise ValueError("state is stopped")
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if np.linalg.norm(state.x - state.y) < 1e-14:
        raise DegeneratePair("x and y coincide; the coupling needs rho > 0")
    n = model.n
    dB = rng.standard_normal(n) * np.sqrt(dt)
    p = state.p if state.p is not None else solve_bvp(model, eps, state.x, state.y, steps=steps).p
    P = transport_matrix(model, hamiltonian_flow(model, eps, state.x, p, 1.0, steps))
    vx = state.frame_x @ dB
    vy = P @ vx
    vx[-1] = 0.0
    vy[-1] = 0.0
    # horizontal covectors with p_Z = 0 integrate to horizontal straight steps
    step_x = hamiltonian_flow(model, eps, state.x, vx, 1.0, 8)
    frame = transport_matrix(model, step_x) @ state.frame_x
    x_new = step_x.endpoint
    y_new, _ = flow_endpoint(model, eps, state.y, vy, 1.0, 8)
    t_new = state.t + dt
    try:
        sol = solve_bvp(model, eps, x_new, y_new, steps=steps, p_guess=p)
    except NumericError:
        return CouplingState(t_new, x_new, y_new, frame, state.rho, True, "solver_failure", p)
    if sol.near_cut_locus:
        return CouplingState(t_new, x_new, y_new, frame, sol.r, True, "cut_locus", sol.p)
    return CouplingState(t_new, x_new, y_new, frame, sol.r, False, None, sol.p)


# --- ensemble ------------------------------------------------------------------------


def path_generators(seed: int, n_paths: int, start: int = 0, stop: int | None = None):
    """Independent generators for path ids ``start..stop-1`` of a run seeded by ``seed``."""
    stop = n_paths if stop is None else stop
    children = np.random.SeedSequence(seed).spawn(n_paths)[start:stop]
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SASAKI_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class _Acc:
    """Additive accumulators of one block of paths."""

    n_ckpt: int
    d_sum: float = 0.0
    d_sq: float = 0.0
    dr_sum: float = 0.0
    dr_sq: float = 0.0
    count: int = 0
    viol: int = 0
    win_dr: np.ndarray = None
    win_bound: np.ndarray = None
    win_d_sq: np.ndarray = None
    win_n: np.ndarray = None

    def __post_init__(self):
        k = self.n_ckpt
        self.win_dr = np.zeros(k)
        self.win_bound = np.zeros(k)
        self.win_d_sq = np.zeros(k)
        self.win_n = np.zeros(k, dtype=np.int64)

    def merge(self, other: "_Acc"):
        for name in ("d_sum", "d_sq", "dr_sum", "dr_sq", "count", "viol"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        self.win_dr = self.win_dr + other.win_dr
        self.win_bound = self.win_bound + other.win_bound
        self.win_d_sq = self.win_d_sq + other.win_d_sq
        self.win_n = self.win_n + other.win_n


@dataclass
class CouplingStats:
    n_paths: int
    dt: float
    T: float
    eps: float
    rho0: float
    seed: int
    model: dict
    times: np.ndarray = field(repr=False)
    rho: np.ndarray = field(repr=False)
    stopped: np.ndarray = field(repr=False)
    stop_time: np.ndarray = field(repr=False)
    stop_reason: list = field(repr=False, default_factory=list)
    violation_count: int = 0
    n_samples: int = 0
    drift_mean: float = float("nan")
    drift_var: float = float("nan")
    incr_mean: float = float("nan")
    incr_var: float = float("nan")
    drift_table: list = field(default_factory=list)
    k1: float = 0.0
    k2: float = 0.0

    @property
    def n(self) -> int:
        return 2 * int(self.model.get("m", 1))

    def quantiles(self, qs=(0.05, 0.25, 0.5, 0.75, 0.95)) -> list:
        rows = []
        for j, t in enumerate(self.times):
            live = ~self.stopped[:, j]
            vals = self.rho[live, j]
            row = {"t": float(t), "alive": int(live.sum())}
            for q in qs:
                row[f"q{int(round(100 * q)):02d}"] = float(np.quantile(vals, q)) if vals.size else None
            rows.append(row)
        return rows

    def csv_rows(self):
        for i in range(self.n_paths):
            for j, t in enumerate(self.times):
                yield i, float(t), float(self.rho[i, j]), int(self.stopped[i, j])

    def summary(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "dt": self.dt,
            "T": self.T,
            "eps": self.eps,
            "rho0": self.rho0,
            "seed": self.seed,
            "model": self.model,
            "n_samples": self.n_samples,
            "violation_count": self.violation_count,
            "stopped_paths": int(self.stopped[:, -1].sum()),
            "stop_reasons": {r: self.stop_reason.count(r) for r in sorted(set(self.stop_reason))},
            "quantiles": self.quantiles(),
            "drift_table": self.drift_table,
        }


def _heis_block(eps, rho0_q, lam0, gens, steps, dt, ckpt_idx, k1, k2, n, rho0):
    """Simulate one block of Heisenberg paths; returns per-path series and an accumulator."""
    B = len(gens)
    m = n // 2
    q = np.repeat(rho0_q[None, :], B, axis=0)
    lam = np.full(B, lam0)
    _, rho, lam = heisenberg_log(q, eps, lam0=lam)
    stopped = np.zeros(B, bool)
    stop_t = np.full(B, np.inf)
    reasons = np.array([""] * B, dtype=object)
    n_ck = len(ckpt_idx)
    rho_series = np.empty((B, n_ck))
    stop_series = np.zeros((B, n_ck), bool)
    acc = _Acc(max(n_ck - 1, 1))
    sq = np.sqrt(dt)
    ck = 0
    if ckpt_idx[0] == 0:
        rho_series[:, 0] = rho
        ck = 1
    noise = None
    for k in range(steps):
        if k % CHUNK == 0:
            width = min(CHUNK, steps - k)
            noise = np.stack([g.standard_normal((width, n)) for g in gens], axis=1)
        live = ~stopped
        dB = noise[k % CHUNK] * sq
        w = dB[:, :m] + 1j * dB[:, m:]
        wy = w * np.exp(-1j * lam)[:, None]
        zeros = np.zeros((B, 1))
        ix = np.concatenate([-dB, zeros], axis=1)
        iy = np.concatenate([wy.real, wy.imag, zeros], axis=1)
        q_new = heis_mul(heis_mul(ix, q), iy)
        _, rho_new, lam_new = heisenberg_log(q_new, eps, lam0=lam)
        t_new = (k + 1) * dt
        cut = live & (np.abs(lam_new) > 2 * np.pi - CUT_MARGIN)
        ok = live & ~cut
        # drift audit on steps that start and end off the cut locus
        h_prev = _h_of(q, lam, rho, eps)
        v_prev = lam / np.where(rho > 0, rho, 1.0)
        bnd = drift_bound(rho, h_prev, v_prev, k1, k2, n)
        dr = rho_new - rho
        D = dr - bnd * dt
        sel = ok & np.isfinite(D)
        win = min(int(np.searchsorted(ckpt_idx, k + 1, side="left")) - 1, acc.n_ckpt - 1)
        win = max(win, 0)
        Ds, drs = D[sel], dr[sel]
        acc.d_sum += float(Ds.sum())
        acc.d_sq += float((Ds * Ds).sum())
        acc.dr_sum += float(drs.sum())
        acc.dr_sq += float((drs * drs).sum())
        acc.count += int(sel.sum())
        acc.win_dr[win] += float(drs.sum())
        acc.win_bound[win] += float(bnd[sel].sum())
        acc.win_d_sq[win] += float((Ds * Ds).sum())
        acc.win_n[win] += int(sel.sum())
        cb = corollary_bound(rho0, k2, n, t_new) * (1.0 + DELTA_DT)
        acc.viol += int((ok & (rho_new > cb)).sum())
        stop_t = np.where(cut, t_new, stop_t)
        reasons[cut] = "cut_locus"
        stopped = stopped | cut
        q = np.where(ok[:, None], q_new, q)
        lam = np.where(ok, lam_new, lam)
        rho = np.where(ok, rho_new, rho)
        if ck < n_ck and ckpt_idx[ck] == k + 1:
            rho_series[:, ck] = rho
            stop_series[:, ck] = stopped
            ck += 1
    reasons[~stopped] = "horizon"
    return rho_series, stop_series, stop_t, list(reasons), acc


def _h_of(q, lam, rho, eps):
    """Horizontal norm ``h`` of the unit tangent at the start of the current geodesic."""
    with np.errstate(invalid="ignore", divide="ignore"):
        h2 = 1.0 - eps * (lam / rho) ** 2
    return np.sqrt(np.clip(np.where(rho > 0, h2, 1.0), 0.0, 1.0))


def _checkpoints(steps: int, n_checkpoints: int) -> np.ndarray:
    k = max(1, min(n_checkpoints, steps)) if steps > 0 else 0
    return np.unique(np.round(np.linspace(0, steps, k + 1)).astype(int))


def _generic_block(model, eps, x, y, gens, steps, dt, ckpt_idx, k1, k2, n, rho0, bvp_steps):
    B = len(gens)
    n_ck = len(ckpt_idx)
    rho_series = np.empty((B, n_ck))
    stop_series = np.zeros((B, n_ck), bool)
    stop_t = np.full(B, np.inf)
    reasons = []
    acc = _Acc(max(n_ck - 1, 1))
    base = initial_state(model, eps, x, y, steps=bvp_steps)
    for b, g in enumerate(gens):
        st = replace(base)
        ck = 0
        if ckpt_idx[0] == 0:
            rho_series[b, 0] = st.rho
            ck = 1
        for k in range(steps):
            if not st.stopped:
                pk = st.p / st.rho if st.rho > 0 else st.p
                h = float(np.linalg.norm(pk[:-1]))
                bnd = float(drift_bound(st.rho, h, float(pk[-1]), k1, k2, n))
                new = coupled_step(model, eps, st, dt, g, steps=bvp_steps)
                if new.stopped:
                    stop_t[b] = new.t
                    st = replace(st, t=new.t, stopped=True, stop_reason=new.stop_reason)
                else:
                    dr = new.rho - st.rho
                    D = dr - bnd * dt
                    if np.isfinite(D):
                        win = max(min(int(np.searchsorted(ckpt_idx, k + 1)) - 1, acc.n_ckpt - 1), 0)
                        acc.d_sum += D
                        acc.d_sq += D * D
                        acc.dr_sum += dr
                        acc.dr_sq += dr * dr
                        acc.count += 1
                        acc.win_dr[win] += dr
                        acc.win_bound[win] += bnd
                        acc.win_d_sq[win] += D * D
                        acc.win_n[win] += 1
                    if new.rho > corollary_bound(rho0, k2, n, new.t) * (1.0 + DELTA_DT):
                        acc.viol += 1
                    st = new
            if ck < n_ck and ckpt_idx[ck] == k + 1:
                rho_series[b, ck] = st.rho
                stop_series[b, ck] = st.stopped
                ck += 1
        reasons.append(st.stop_reason if st.stopped else "horizon")
    return rho_series, stop_series, stop_t, reasons, acc


def run_coupling(
    model: ModelSpace,
    eps: float,
    x,
    y,
    T: float,
    dt: float,
    n_paths: int,
    seed: int = 0,
    n_checkpoints: int = 50,
    engine: str = "auto",
    bvp_steps: int = 64,
) -> CouplingStats:
    """Simulate ``n_paths`` coupled pairs on ``[0, T]``.

    Path ``i`` draws from its own substream ``SeedSequence(seed).spawn(n)[i]``;
    blocks of paths are fixed independently of the worker count and reduced in
    path order, so results are bit-identical for equal inputs.
    """
    if eps < 0 or T < 0 or dt <= 0 or n_paths < 1:
        raise ValueError("need eps >= 0, T >= 0, dt > 0 and n_paths >= 1")
    x = as_array(x, model.dim).astype(float)
    y = as_array(y, model.dim).astype(float)
    if np.linalg.norm(x - y) < 1e-14:
        raise DegeneratePair("x and y coincide; the coupling needs rho > 0")
    if engine == "auto":
        engine = "heisenberg" if model.family == "heisenberg" else "generic"
    n = model.n
    k1, k2 = _k_bounds(model)
    steps = int(round(T / dt))
    ckpt_idx = _checkpoints(steps, n_checkpoints)
    times = ckpt_idx * dt
    if engine == "heisenberg":
        q0 = heis_mul(-x, y)
        _, r0, lam0 = heisenberg_log(q0, eps)
        rho0 = float(r0)
        lam0 = float(lam0)

        def work(lo, hi):
            gens = path_generators(seed, n_paths, lo, hi)
            return _heis_block(eps, q0, lam0, gens, steps, dt, ckpt_idx, k1, k2, n, rho0)

        block = BLOCK
    elif engine == "generic":
        rho0 = initial_state(model, eps, x, y, steps=bvp_steps).rho

        def work(lo, hi):
            gens = path_generators(seed, n_paths, lo, hi)
            return _generic_block(model, eps, x, y, gens, steps, dt, ckpt_idx, k1, k2, n, rho0, bvp_steps)

        block = 16
    else:
        raise ValueError(f"unknown engine {engine!r}")
    bounds = [(lo, min(lo + block, n_paths)) for lo in range(0, n_paths, block)]
    nt = min(_threads(), len(bounds))
    if nt > 1:
        with ThreadPoolExecutor(nt) as ex:
            parts = list(ex.map(lambda b: work(*b), bounds))
    else:
        parts = [work(*b) for b in bounds]
    acc = _Acc(max(len(ckpt_idx) - 1, 1))
    for part in parts:
        acc.merge(part[4])
    stats = CouplingStats(
        n_paths=n_paths,
        dt=dt,
        T=T,
        eps=eps,
        rho0=rho0,
        seed=seed,
        model=model.spec(),
        times=times,
        rho=np.concatenate([p[0] for p in parts]),
        stopped=np.concatenate([p[1] for p in parts]),
        stop_time=np.concatenate([p[2] for p in parts]),
        stop_reason=[r for p in parts for r in p[3]],
        violation_count=acc.viol,
        n_samples=acc.count,
        k1=k1,
        k2=k2,
    )
    if acc.count:
        c = acc.count
        stats.drift_mean = acc.d_sum / c
        stats.drift_var = max(acc.d_sq / c - stats.drift_mean**2, 0.0) * c / max(c - 1, 1)
        stats.incr_mean = acc.dr_sum / c
        stats.incr_var = max(acc.dr_sq / c - stats.incr_mean**2, 0.0) * c / max(c - 1, 1)
    for j in range(acc.n_ckpt):
        c = int(acc.win_n[j])
        if c == 0 or len(times) < 2:
            continue
        mean_rate = acc.win_dr[j] / c / dt
        mean_bound = acc.win_bound[j] / c
        # standard error of the per-step excess, in rate units
        d_mean = mean_rate - mean_bound
        var = max(acc.win_d_sq[j] / c - (d_mean * dt) ** 2, 0.0) * c / max(c - 1, 1)
        margin = Z99 * np.sqrt(var / c) / dt
        stats.drift_table.append(
            {
                "t0": float(times[j]),
                "t1": float(times[j + 1]),
                "samples": c,
                "drift_rate": float(mean_rate),
                "bound": float(mean_bound),
                "ci99": float(margin),
                "ok": bool(mean_rate <= mean_bound + margin),
            }
        )
    return stats


def verify_bounds(stats: CouplingStats, model: ModelSpace | None = None, eps: float | None = None) -> dict:
    """Audit report: drift versus bound, martingale variance ratio and violations."""
    report = {
        "n_paths": stats.n_paths,
        "dt": stats.dt,
        "eps": stats.eps if eps is None else eps,
        "samples": stats.n_samples,
        "drift_table": stats.drift_table,
        "empty": stats.n_samples == 0,
    }
    if stats.n_samples == 0:
        report.update(
            drift_mean=None, drift_ci99_upper=None, drift_ok=None,
            variance_ratio=None, variance_ok=None,
            violation_fraction=None, violation_ok=None,
        )
        return report
    se = np.sqrt(stats.drift_var / stats.n_samples)
    upper = stats.drift_mean + Z99 * se
    ratio = stats.incr_var / stats.dt
    frac = stats.violation_count / stats.n_samples
    report.update(
        drift_mean=float(stats.drift_mean),
        drift_ci99_upper=float(upper),
        drift_ok=bool(upper <= 0.0),
        variance_ratio=float(ratio),
        variance_ok=bool(ratio < 0.05),
        violation_count=int(stats.violation_count),
        violation_fraction=float(frac),
        violation_ok=bool(frac <= 0.01),
        drift_table_ok=bool(all(r["ok"] for r in stats.drift_table)),
    )
    return report
