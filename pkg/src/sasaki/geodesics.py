"""Geodesic flow of ``g_eps`` (``eps >= 0``), shooting solver and distances.

Covectors are stored in the coframe dual to the left-invariant frame (body
components).  For ``p`` in that coframe the flow is

    x'  = E(x) sharp_eps(p),          sharp_eps(p) = (p_H, eps * p_Z)
    p_a' = -sum_{b,c} xi_b p_c C[a, b, c]

which for ``eps = 0`` is the sub-Riemannian normal geodesic flow.  Everything
is integrated with fixed-step classical RK4, batched over leading axes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence, OracleBudgetExceeded
from .models import ModelSpace, as_array

log = logging.getLogger(__name__)

DEFAULT_STEPS = 128
BVP_TOL = 1e-8
_POLISH_TOL = 1e-13


def sharp(p: np.ndarray, eps: float) -> np.ndarray:
    xi = np.array(p, dtype=float)
    xi[..., -1] *= eps
    return xi


def hamiltonian(p: np.ndarray, eps: float) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return 0.5 * (np.sum(p[..., :-1] ** 2, axis=-1) + eps * p[..., -1] ** 2)


def speed(p, eps):
    return np.sqrt(2.0 * hamiltonian(p, eps))


def _rhs(model: ModelSpace, eps: float, x, p):
    xi = sharp(p, eps)
    F = model.frame_matrix(x)
    xdot = np.einsum("...ij,...j->...i", F, xi)
    pdot = -np.einsum("...b,...c,abc->...a", xi, p, model.C)
    return xdot, pdot


def _rk4_step(model, eps, x, p, h):
    k1x, k1p = _rhs(model, eps, x, p)
    k2x, k2p = _rhs(model, eps, x + 0.5 * h * k1x, p + 0.5 * h * k1p)
    k3x, k3p = _rhs(model, eps, x + 0.5 * h * k2x, p + 0.5 * h * k2p)
    k4x, k4p = _rhs(model, eps, x + h * k3x, p + h * k3p)
    x = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
    p = p + (h / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p)
    return x, p


def flow_endpoint(model: ModelSpace, eps: float, x, p, T: float = 1.0, steps: int = DEFAULT_STEPS):
    """Endpoint ``(x(T), p(T))`` of the flow; batched over leading axes."""
    x = np.array(x, dtype=float)
    p = np.array(p, dtype=float)
    x, p = np.broadcast_arrays(x, p)
    x, p = x.copy(), p.copy()
    h = T / steps
    for _ in range(steps):
        x, p = _rk4_step(model, eps, x, p, h)
    return x, p


def momentum_path(model: ModelSpace, eps: float, p0, T: float, steps: int) -> np.ndarray:
    """Body momentum at the grid and RK4 half steps: shape ``(2*steps+1, ..., dim)``.

    The Euler-Arnold equation does not involve the position, so transport and
    Jacobi integrators can reuse this table on the same grid.
    """
    p = np.array(p0, dtype=float)
    h = T / steps
    out = np.empty((2 * steps + 1,) + p.shape)
    out[0] = p

    def f(q):
        return -np.einsum("...b,...c,abc->...a", sharp(q, eps), q, model.C)

    for i in range(steps):
        k1 = f(p)
        k2 = f(p + 0.5 * h * k1)
        k3 = f(p + 0.5 * h * k2)
        k4 = f(p + h * k3)
        # third-order continuous extension of RK4 evaluated at the midpoint
        out[2 * i + 1] = p + h * (5 * k1 + 4 * k2 + 4 * k3 - k4) / 24.0
        p = p + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[2 * i + 2] = p
    return out


@dataclass
class GeodesicRecord:
    """Discretised ``g_eps`` geodesic ``t -> exp_eps(t p0)`` on ``[0, T]``."""

    eps: float
    x0: np.ndarray
    p0: np.ndarray
    T: float
    steps: int
    t: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    tangent: np.ndarray = field(repr=False)
    r: float = 0.0
    h: float = 0.0
    v: float = 0.0
    model: ModelSpace = field(default=None, repr=False)

    @property
    def endpoint(self) -> np.ndarray:
        return self.x[-1]

    def hamiltonian_drift(self) -> float:
        H = hamiltonian(self.p, self.eps)
        return float(np.abs(H - H[0]).max())


def hamiltonian_flow(model: ModelSpace, eps: float, x, p, T: float = 1.0, steps: int = DEFAULT_STEPS) -> GeodesicRecord:
    """Integrate the Hamiltonian flow from covector ``p`` at ``x`` for time ``T``."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = as_array(x, model.dim).copy()
    p = as_array(p, model.dim).copy()
    xs = np.empty((steps + 1, model.dim))
    ps = np.empty_like(xs)
    xs[0], ps[0] = x, p
    h = T / steps
    xc, pc = x, p
    for i in range(steps):
        xc, pc = _rk4_step(model, eps, xc, pc, h)
        xs[i + 1], ps[i + 1] = xc, pc
    s = float(speed(p, eps))
    rec = GeodesicRecord(
        eps=eps,
        x0=x,
        p0=p,
        T=T,
        steps=steps,
        t=np.linspace(0.0, T, steps + 1),
        x=xs,
        p=ps,
        tangent=sharp(ps, eps),
        r=s * T,
        h=float(np.linalg.norm(p[:-1]) / s) if s > 0 else 0.0,
        v=float(p[-1] / s) if s > 0 else 0.0,
        model=model,
    )
    return rec


def unit_geodesic(model: ModelSpace, eps: float, x, p, steps: int = DEFAULT_STEPS) -> GeodesicRecord:
    """Arc-length reparametrisation of ``t -> exp_eps(t p)``, ``t in [0, 1]``."""
    p = as_array(p, model.dim)
    s = float(speed(p, eps))
    if s == 0:
        raise ValueError("zero covector has no unit-speed geodesic")
    return hamiltonian_flow(model, eps, x, p / s, T=s, steps=steps)


# --- shooting -----------------------------------------------------------------


@dataclass
class BvpSolution:
    p: np.ndarray
    r: float
    converged: bool
    multiplicity_hint: int
    n_solutions: int = 1
    cond: float = 1.0
    residual: float = 0.0
    eps: float = 0.0
    x: np.ndarray = None
    y: np.ndarray = None
    steps: int = DEFAULT_STEPS
    lengths: list = field(default_factory=list)

    @property
    def conjugate(self) -> bool:
        return self.cond > 1e8

    @property
    def near_cut_locus(self) -> bool:
        return self.multiplicity_hint >= 2 or self.conjugate

    def as_dict(self) -> dict:
        return {
            "r": self.r,
            "p": [float(v) for v in self.p],
            "multiplicity_hint": self.multiplicity_hint,
            "converged": self.converged,
            "residual": self.residual,
            "cond": self.cond,
        }


def _start_grid(model: ModelSpace, eps: float, x, y) -> np.ndarray:
    n = model.n
    F = model.frame_matrix(x)
    d0 = np.linalg.solve(F, y - x)
    h0 = d0[:n]
    nh = np.linalg.norm(h0)
    u = h0 / nh if nh > 1e-12 else np.eye(n)[0]
    r_hat = max(nh, np.sqrt(4 * np.pi * abs(d0[-1])), 1e-8)
    Ju = np.concatenate([-u[model.m:], u[: model.m]])
    starts = []
    for k in range(8):
        th = 2 * np.pi * k / 8
        hk = r_hat * (np.cos(th) * u + np.sin(th) * Ju)
        for pz in np.linspace(-4 * np.pi, 4 * np.pi, 9):
            starts.append(np.append(hk, pz))
        # p_Z = +-2 pi is singular for near-vertical targets; start just inside it
        for pz in (-1.9 * np.pi, 1.9 * np.pi):
            starts.append(np.append(hk, pz))
    starts.append(d0 if eps == 0 else np.append(h0, d0[-1] / eps))
    starts.append(np.append(h0, 0.0))
    return np.array(starts)


def _newton(model, eps, x, y, P, steps, tol, max_iter):
    """Batched damped Newton on the time-1 endpoint map from several starts."""
    d = model.dim
    P = P.copy()
    best_P = P.copy()
    best_res = np.full(len(P), np.inf)
    best_cond = np.full(len(P), np.inf)
    alive = np.ones(len(P), bool)
    stall = np.zeros(len(P), int)
    for _ in range(max_iter):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        Pa = P[idx]
        hstep = 1e-7 * np.maximum(1.0, np.abs(Pa).max(axis=1))
        batch = np.repeat(Pa[:, None, :], d + 1, axis=1)
        batch[:, 1:, :] += hstep[:, None, None] * np.eye(d)[None]
        with np.errstate(over="ignore", invalid="ignore"):
            # divergent starts overflow; they are discarded through their residual
            xe, _ = flow_endpoint(model, eps, np.broadcast_to(x, batch.shape), batch, 1.0, steps)
        with np.errstate(over="ignore", invalid="ignore"):
            R0 = xe[:, 0] - y
            Jac = (xe[:, 1:] - xe[:, :1]).transpose(0, 2, 1) / hstep[:, None, None]
            r0 = np.linalg.norm(R0, axis=1)
        r0 = np.where(np.isfinite(r0), r0, np.inf)
        prev = best_res[idx].copy()
        improved = r0 < prev
        sig = np.linalg.svd(Jac, compute_uv=False) if np.all(np.isfinite(Jac)) else None
        with np.errstate(over="ignore"):
            cnd = sig[:, 0] / np.maximum(sig[:, -1], 1e-300) if sig is not None else np.full(idx.size, np.inf)
        upd = idx[improved]
        best_P[upd] = Pa[improved]
        best_res[upd] = r0[improved]
        best_cond[upd] = cnd[improved]
        stall[idx] = np.where(r0 < 0.9 * prev, 0, stall[idx] + 1)
        done = (best_res[idx] < _POLISH_TOL) | ((best_res[idx] < tol) & ~improved) | (stall[idx] > 6)
        if sig is None:
            alive[idx] = False
            break
        step = -np.einsum("bij,bj->bi", np.linalg.pinv(Jac, rcond=1e-10), np.where(np.isfinite(R0), R0, 0.0))
        cap = np.maximum(1.0, 0.5 * np.linalg.norm(Pa, axis=1))
        sn = np.linalg.norm(step, axis=1)
        step *= np.minimum(1.0, cap / np.maximum(sn, 1e-300))[:, None]
        # near-singular endpoint maps often need one full step uphill before the
        # quadratic phase, so allow two free steps before damping from the best iterate
        free = improved | (stall[idx] <= 2)
        base = np.where(free[:, None], Pa, best_P[idx])
        half = np.where(free, 1.0, 0.5 ** np.minimum(stall[idx] - 2, 6))[:, None]
        P[idx[~done]] = (base + half * step)[~done]
        alive[idx[done]] = False
    return best_P, best_res, best_cond


def _length(p, eps):
    return float(speed(p, eps))


def solve_bvp(
    model: ModelSpace,
    eps: float,
    x,
    y,
    steps: int = DEFAULT_STEPS,
    p_guess=None,
    tol: float = BVP_TOL,
    max_iter: int = 40,
) -> BvpSolution:
    """Minimising initial covector ``p`` with ``exp_eps(p) = y`` (multi-start shooting).

    ``multiplicity_hint`` counts distinct solutions whose length is within 1%
    of the shortest one; 2 or more signals proximity to the cut locus.
    """
    x = as_array(x, model.dim).astype(float)
    y = as_array(y, model.dim).astype(float)
    if np.linalg.norm(y - x) < 1e-14:
        return BvpSolution(np.zeros(model.dim), 0.0, True, 1, 1, 1.0, 0.0, eps, x, y, steps, [0.0])
    if p_guess is not None:
        P, res, cond = _newton(model, eps, x, y, np.atleast_2d(as_array(p_guess)), steps, tol, max_iter)
        if res[0] < tol:
            return BvpSolution(P[0], _length(P[0], eps), True, 1, 1, float(cond[0]), float(res[0]), eps, x, y, steps, [_length(P[0], eps)])
    starts = _start_grid(model, eps, x, y)
    # coarse pass on a quarter of the grid, then polish the distinct survivors
    coarse = max(16, steps // 4)
    P, res, _ = _newton(model, eps, x, y, starts, coarse, 1e-6, max_iter)
    good = np.flatnonzero(res < 1e-3)
    if good.size == 0:
        good = np.argsort(res)[:8]
    cand = []
    for i in good[np.argsort(res[good])]:
        if all(np.linalg.norm(P[i] - P[j]) > 1e-4 * (1 + np.linalg.norm(P[i])) for j in cand):
            cand.append(i)
    P, res, cond = _newton(model, eps, x, y, P[cand], steps, tol, max_iter)
    ok = res < tol
    while not np.any(ok) and np.isfinite(res.min()) and res.min() < 1e-4 and steps < 1024:
        # near a fold of the discrete endpoint map: refine the grid and polish
        steps *= 2
        keep = res < 100 * res.min()
        P, res, cond = _newton(model, eps, x, y, P[keep], steps, tol, max_iter)
        ok = res < tol
    if not np.any(ok):
        raise NoConvergence(f"no shooting start converged (best residual {res.min():.3e})")
    sols = []
    for p, rr, cc in zip(P[ok], res[ok], cond[ok]):
        if any(np.linalg.norm(p - q[0]) < 1e-6 * (1 + np.linalg.norm(p)) for q in sols):
            continue
        sols.append((p, rr, cc, _length(p, eps)))
    sols.sort(key=lambda s: (round(s[3], 12), tuple(np.round(s[0], 12))))
    best = sols[0]
    lengths = [s[3] for s in sols]
    mult = sum(1 for L in lengths if L <= best[3] * 1.01 + 1e-12)
    return BvpSolution(best[0], best[3], True, mult, len(sols), float(best[2]), float(best[1]), eps, x, y, steps, lengths)


def distance(model: ModelSpace, eps: float, x, y, **kw) -> float:
    return solve_bvp(model, eps, x, y, **kw).r


def geodesic_between(model: ModelSpace, eps: float, x, y, steps: int = DEFAULT_STEPS, sol: BvpSolution | None = None):
    """Unit-speed minimising geodesic record from ``x`` to ``y`` and its BVP solution."""
    sol = sol or solve_bvp(model, eps, x, y, steps=steps)
    return unit_geodesic(model, eps, x, sol.p, steps=steps), sol


def left_translate_flow(model: ModelSpace, x, u, s: float = 1.0, steps: int = 64) -> np.ndarray:
    """Coordinates of ``x * exp(s u)`` (integral curve of the left-invariant field ``u``)."""
    x = np.array(x, dtype=float)
    u = np.asarray(u, dtype=float)
    h = s / steps

    def f(z):
        return np.einsum("...ij,...j->...i", model.frame_matrix(z), u)

    for _ in range(steps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


# --- Heisenberg closed forms ----------------------------------------------------


def _split(q):
    q = np.asarray(q, dtype=float)
    m = (q.shape[-1] - 1) // 2
    return q[..., :m] + 1j * q[..., m : 2 * m], q[..., -1]


def _join(zeta, z):
    return np.concatenate([zeta.real, zeta.imag, np.asarray(z)[..., None]], axis=-1)


def heis_mul(a, b):
    """Group law in first-kind coordinates, ``z + z' + 1/2 sum Im(conj(zeta') zeta)``."""
    za, ta = _split(a)
    zb, tb = _split(b)
    return _join(za + zb, ta + tb + 0.5 * np.sum(np.imag(np.conj(zb) * za), axis=-1))


def heis_inv(a):
    return -np.asarray(a, dtype=float)


def _g_ratio(lam):
    """``(lam - sin lam) / (8 sin^2(lam/2))`` and its derivative."""
    lam = np.asarray(lam, dtype=float)
    small = np.abs(lam) < 1e-3
    ls = np.where(small, 1.0, lam)
    one_c = 1.0 - np.cos(ls)
    N = ls - np.sin(ls)
    D = 4.0 * one_c
    with np.errstate(divide="ignore", invalid="ignore"):
        g = N / D
        dg = (one_c * D - N * 4.0 * np.sin(ls)) / D**2
    g = np.where(small, lam / 12 + lam**3 / 360, g)
    dg = np.where(small, 1 / 12 + lam**2 / 120, dg)
    return g, dg


def heisenberg_exp(p, eps: float = 0.0):
    """Closed-form time-1 endpoint from the origin for body covector ``p``."""
    w, lam = _split(p)
    small = np.abs(lam) < 1e-6
    ls = np.where(small, 1.0, lam)
    fac = np.where(small, 1.0 - 0.5j * lam, (1 - np.exp(-1j * ls)) / (1j * ls))
    zeta = w * fac[..., None]
    w2 = np.sum(np.abs(w) ** 2, axis=-1)
    g = np.where(small, lam / 12.0, (ls - np.sin(ls)) / (2 * ls**2))
    return _join(zeta, eps * lam + w2 * g)


def heisenberg_log(q, eps: float = 0.0, lam0=None, iters: int = 60):
    """Main-branch (``|lam| < 2 pi``) covector from the origin to ``q``, vectorised.

    Returns ``(p, r, lam)`` with ``p`` the time-1 covector and ``r`` its length.
    Solves ``eps lam + |zeta|^2 g(lam) = z`` by safeguarded Newton.  For
    ``eps = 0`` a vertical target ``zeta = 0`` lies on the cut locus: there
    ``r = sqrt(4 pi |z|)``, ``lam = 2 pi sign(z)`` and, since the minimising
    covector is not unique, its horizontal part is returned as zero.
    """
    zeta, z = _split(q)
    a = np.sum(np.abs(zeta) ** 2, axis=-1)
    z = np.asarray(z, dtype=float)
    lo = np.full(z.shape, -2 * np.pi)
    hi = np.full(z.shape, 2 * np.pi)
    lam = np.zeros(z.shape) if lam0 is None else np.clip(np.asarray(lam0, float), -6.28, 6.28)
    vertical = (a == 0) & (eps == 0)
    a = np.where(vertical, 1.0, a)
    for _ in range(iters):
        g, dg = _g_ratio(lam)
        F = eps * lam + a * g - z
        lo = np.where(F < 0, lam, lo)
        hi = np.where(F > 0, lam, hi)
        dF = eps + a * dg
        with np.errstate(divide="ignore", invalid="ignore"):
            new = lam - F / dF
        bad = ~np.isfinite(new) | (new < lo) | (new > hi)
        new = np.where(bad, 0.5 * (lo + hi), new)
        if np.all(np.abs(new - lam) <= 1e-13 * (1 + np.abs(lam))):
            lam = new
            break
        lam = new
    small = np.abs(lam) < 1e-6
    ls = np.where(small, 1.0, lam)
    fac = np.where(small, 1.0 + 0.5j * lam, 1j * ls / (1 - np.exp(-1j * ls)))
    w = zeta * fac[..., None]
    # for |lam| > 1 use |w|^2 = 2 (z - eps lam) lam^2 / (lam - sin lam), which stays
    # well conditioned as lam -> 2 pi where fac blows up
    big = np.abs(lam) > 1.0
    if np.any(big):
        lb = np.where(big, lam, 2.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            w2 = np.maximum(2 * (z - eps * lb) * lb**2 / (lb - np.sin(lb)), 0.0)
            unit = zeta / np.sqrt(np.where(a > 0, a, 1.0))[..., None]
        w_big = unit * (np.exp(0.5j * lb) * np.sqrt(w2))[..., None]
        w = np.where(big[..., None], w_big, w)
    if np.any(vertical):
        lam = np.where(vertical, 2 * np.pi * np.sign(z), lam)
        w = np.where(vertical[..., None], 0.0, w)
    p = _join(w, lam)
    r = np.sqrt(np.sum(np.abs(w) ** 2, axis=-1) + eps * lam**2)
    r = np.where(vertical, np.sqrt(4 * np.pi * np.abs(z)), r)
    return p, r, lam


def heisenberg_oracle(x, y, grid: int = 4001, budget: int = 200) -> float:
    """Sub-Riemannian distance on the first Heisenberg group by grid + bisection.

    Independent of the RK4 shooting solver: geodesics from the origin with total
    rotation ``phi`` reach ``|zeta| = r |sin(phi/2)| / |phi/2|`` and height
    ``z = |zeta|^2 (phi - sin phi) / (8 sin^2(phi/2))``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (3,) or y.shape != (3,):
        raise ValueError("heisenberg_oracle supports m = 1 only")
    q = heis_mul(heis_inv(x), y)
    rad = float(np.hypot(q[0], q[1]))
    z = float(q[2])
    if rad * rad == 0.0:
        return float(np.sqrt(4 * np.pi * abs(z)))
    target = z / rad**2
    phis = np.linspace(-2 * np.pi, 2 * np.pi, grid)[1:-1]
    phis = phis[phis != 0.0]
    vals = (phis - np.sin(phis)) / (8 * np.sin(phis / 2) ** 2) - target
    sign_change = np.flatnonzero(np.diff(np.sign(vals)) != 0)
    if sign_change.size == 0:
        lo, hi = (phis[-1], 2 * np.pi) if target > 0 else (-2 * np.pi, phis[0])
    else:
        lo, hi = phis[sign_change[0]], phis[sign_change[0] + 1]

    def fval(ph):
        return (ph - np.sin(ph)) / (8 * np.sin(ph / 2) ** 2) - target if ph != 0 else -target

    # the left-hand side is increasing in phi, so the sign at the midpoint decides
    for _ in range(budget):
        mid = 0.5 * (lo + hi)
        if fval(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15 * (1 + abs(mid)):
            break
    else:
        raise OracleBudgetExceeded("bisection budget exhausted")
    phi = 0.5 * (lo + hi)
    half = phi / 2
    if abs(phi) > 1.0:
        # equivalent form that stays accurate as phi -> 2 pi
        return float(np.sqrt(2 * z * phi * phi / (phi - np.sin(phi))))
    return float(rad if abs(half) < 1e-12 else rad * half / np.sin(half))
