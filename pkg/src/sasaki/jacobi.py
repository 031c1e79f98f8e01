"""Model Jacobi fields, index forms and the comparison checks built on them.

Along a unit-speed ``g_eps`` geodesic with ``h = |gamma'_H|`` and
``v = theta(gamma') / eps``, a model field is

    Y = (a / h) J gamma'_H - b (Z - (v / h^2) gamma'_H) + X

with ``X`` horizontal and orthogonal to ``gamma'_H`` and ``J gamma'_H``.  In a
constant-curvature model the Jacobi equations decouple into

    a'' + (b' - h a) / (h eps) + K1 a = 0,   b'' = h a',
    X'' - v J X' + (K2 - v^2 / 4) X = 0,

whose solutions with ``b(0) = b(r) = 0`` are built here in closed form.
Complex numbers act on horizontal vectors through ``z . u = Re(z) u + Im(z) J u``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .comparison import (
    _all,
    f_rie,
    f_sas,
    g_rie,
    g_sas,
    k_constants,
    one_minus_c_over_k,
    phi_scaled,
    sk_ck,
    t_minus_s_over_k,
)
from .errors import ConjugatePoint, CutLocus, DegenerateHorizontal
from .geodesics import GeodesicRecord, geodesic_between, momentum_path, sharp, solve_bvp
from .models import ModelSpace, _j_horizontal, as_array, curvature_constants
from .transport import transport_path

log = logging.getLogger(__name__)

H_MIN = 1e-8


def _cmul(z, u):
    """Complex action ``z . u`` on horizontal vectors; broadcasts ``z`` over a leading axis."""
    z = np.asarray(z)
    u = np.asarray(u, dtype=float)
    return np.multiply.outer(z.real, u) + np.multiply.outer(z.imag, _j_horizontal(u))


def sk_ck_vec(k, t):
    s, c, _, _ = _all(k, t)
    return s, c


@dataclass
class ModelJacobiField:
    r: float
    eps: float
    h: float
    v: float
    K1: float
    K2: float
    a0: float
    a1: float
    u0: np.ndarray
    u1: np.ndarray
    phi_r: float = field(init=False)

    def __post_init__(self):
        self.u0 = np.asarray(self.u0, dtype=float)
        self.u1 = np.asarray(self.u1, dtype=float)
        phi, _, _ = phi_scaled(self.r, self.r, self.K1, self.eps)
        self.phi_r = float(phi)
        scale = abs(self._A * sk_ck(self.K1, self.r).s) + abs(self._B) ** 2
        if (self.a0 != 0 or self.a1 != 0) and abs(self.phi_r) <= 1e-10 * scale:
            raise ConjugatePoint(f"phi(r) vanishes (r={self.r}, K1={self.K1})")
        if np.any(self.u0) or np.any(self.u1):
            sr = sk_ck(self.K2, self.r).s
            if abs(sr) <= 1e-10 * max(self.r, 1.0):
                raise ConjugatePoint(f"s_K2(r) vanishes (r={self.r}, K2={self.K2})")

    # -- scalar parts -------------------------------------------------------
    @property
    def _A(self):
        return -(t_minus_s_over_k(self.K1, self.r) - self.eps * self.r)

    @property
    def _B(self):
        return one_minus_c_over_k(self.K1, self.r)

    def phi(self, t):
        return phi_scaled(t, self.r, self.K1, self.eps)

    def Phi(self, t):
        """Antiderivative ``int_0^t phi`` (same scaling as :meth:`phi`)."""
        return self._A * one_minus_c_over_k(self.K1, t) + self._B * t_minus_s_over_k(self.K1, t)

    def a(self, t, order=0):
        t = np.asarray(t, dtype=float)
        f = self.phi(t)[order]
        g = self.phi(self.r - t)[order] * (-1) ** order
        return (self.a1 * f + self.a0 * g) / self.phi_r

    def int_a(self, t):
        t = np.asarray(t, dtype=float)
        return (self.a1 * self.Phi(t) + self.a0 * (self.Phi(self.r) - self.Phi(self.r - t))) / self.phi_r

    def b(self, t, order=0):
        t = np.asarray(t, dtype=float)
        hbar = self.h if self.eps > 0 else 1.0
        mean = self.int_a(self.r) / self.r
        if order == 0:
            return hbar * (self.int_a(t) - t * mean)
        if order == 1:
            return hbar * (self.a(t) - mean)
        return hbar * self.a(t, order - 1)

    # -- complex coefficients of u0 and u1 ------------------------------------
    def f(self, t, order=0):
        """``(f0, f1)`` with ``X = f0 . u0 + f1 . u1`` and their derivatives."""
        t = np.asarray(t, dtype=float)
        K2, r, v = self.K2, self.r, self.v
        sr = sk_ck(K2, r).s
        s_t, c_t = sk_ck_vec(K2, t)
        s_b, c_b = sk_ck_vec(K2, r - t)
        e0 = np.exp(0.5j * v * t)
        e1 = np.exp(0.5j * v * (t - r))
        w = 0.5j * v
        # f0 = e0 s(r - t) / s(r), f1 = e1 s(t) / s(r)
        g0 = [s_b, -c_b, -K2 * s_b]
        g1 = [s_t, c_t, -K2 * s_t]
        if order == 0:
            return e0 * g0[0] / sr, e1 * g1[0] / sr
        if order == 1:
            return e0 * (w * g0[0] + g0[1]) / sr, e1 * (w * g1[0] + g1[1]) / sr
        return e0 * (w * w * g0[0] + 2 * w * g0[1] + g0[2]) / sr, e1 * (w * w * g1[0] + 2 * w * g1[1] + g1[2]) / sr

    def X(self, t, order=0):
        f0, f1 = self.f(t, order)
        return _cmul(f0, self.u0) + _cmul(f1, self.u1)

    def samples(self, num: int = 201) -> dict:
        t = np.linspace(0.0, self.r, num)
        return {"t": t, "a": self.a(t), "b": self.b(t), "X": self.X(t)}


def model_jacobi(r, eps, h, v, K1, K2, a0, a1, u0, u1) -> ModelJacobiField:
    """Closed-form solution of the model Jacobi equations with the given boundary data."""
    if r <= 0:
        raise ValueError("r must be > 0")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if eps > 0 and h < H_MIN and (a0 or a1):
        raise DegenerateHorizontal("model field needs h > 0")
    return ModelJacobiField(float(r), float(eps), float(h), float(v), float(K1), float(K2), float(a0), float(a1), u0, u1)


def ode_residual(fld: ModelJacobiField, num: int = 2001) -> float:
    """Relative residual of the model equations from fourth-order finite differences of samples."""
    t = np.linspace(0.0, fld.r, num)
    dt = t[1] - t[0]
    a, b = fld.a(t), fld.b(t)
    f0, f1 = fld.f(t)

    def d1(y):
        out = np.zeros_like(y)
        out[2:-2] = (y[:-4] - 8 * y[1:-3] + 8 * y[3:-1] - y[4:]) / (12 * dt)
        return out

    def d2(y):
        out = np.zeros_like(y)
        out[2:-2] = (-y[:-4] + 16 * y[1:-3] - 30 * y[2:-2] + 16 * y[3:-1] - y[4:]) / (12 * dt**2)
        return out

    inner = slice(5, -5)
    res = []
    da, dda, db, ddb = d1(a), d2(a), d1(b), d2(b)
    hbar = fld.h if fld.eps > 0 else 1.0
    scale_b = np.abs(ddb).max() + hbar * np.abs(da).max() + 1e-300
    res.append(np.abs(ddb - hbar * da)[inner].max() / scale_b)
    if fld.eps > 0:
        coup = (db - fld.h * a) / (fld.h * fld.eps)
        eq = dda + coup + fld.K1 * a
        scale_a = np.abs(dda).max() + np.abs(coup).max() + abs(fld.K1) * np.abs(a).max() + 1e-300
        res.append(np.abs(eq)[inner].max() / scale_a)
    else:
        eq = dda + fld.K1 * a
        scale_a = np.abs(dda).max() + (abs(fld.K1) + fld.r**-2) * np.abs(a).max() + 1e-300
        res.append(np.ptp(eq[inner]) / scale_a)
        res.append(abs(fld.int_a(fld.r)) / (fld.r * np.abs(a).max() + 1e-300))
    for f in (f0, f1):
        eq = d2(f) - 1j * fld.v * d1(f) + (fld.K2 - fld.v**2 / 4) * f
        scale = np.abs(d2(f)).max() + abs(fld.v) * np.abs(d1(f)).max() + (abs(fld.K2) + fld.r**-2) * np.abs(f).max() + 1e-300
        res.append(np.abs(eq)[inner].max() / scale)
    return float(max(res))


def exact_a_coefficients(fld: ModelJacobiField):
    """``(phi'(r) / phi(r), (phi'(r) - phi'(0)) / phi(r))``; equal to ``(F_Sas, G_Sas)`` at eps = 0."""
    dphi_r = float(fld.phi(fld.r)[1])
    dphi_0 = float(fld.phi(0.0)[1])
    return dphi_r / fld.phi_r, (dphi_r - dphi_0) / fld.phi_r


def _main_terms(fld: ModelJacobiField) -> float:
    val = 0.0
    if fld.a0 or fld.a1:
        F, G = exact_a_coefficients(fld)
        val += (fld.a1**2 + fld.a0**2) * F - 2 * fld.a0 * fld.a1 * (F - G)
    if np.any(fld.u0) or np.any(fld.u1):
        nn = float(fld.u0 @ fld.u0 + fld.u1 @ fld.u1)
        sr = sk_ck(fld.K2, fld.r).s
        rot = _cmul(np.exp(0.5j * fld.r * fld.v), fld.u0)
        val += nn * g_rie(fld.r, fld.K2) + (nn - 2 * float(fld.u1 @ rot)) / sr
    return float(val)


def display_form(fld: ModelJacobiField) -> float:
    """The index formula with the eps-free comparison functions ``F_Sas``, ``G_Sas``."""
    val = 0.0
    if fld.a0 or fld.a1:
        F, G = f_sas(fld.r, fld.K1), g_sas(fld.r, fld.K1)
        val += (fld.a1**2 + fld.a0**2) * F - 2 * fld.a0 * fld.a1 * (F - G)
    if np.any(fld.u0) or np.any(fld.u1):
        nn = float(fld.u0 @ fld.u0 + fld.u1 @ fld.u1)
        sr = sk_ck(fld.K2, fld.r).s
        rot = _cmul(np.exp(0.5j * fld.r * fld.v), fld.u0)
        val += nn * g_rie(fld.r, fld.K2) + (nn - 2 * float(fld.u1 @ rot)) / sr
    return float(val)


# --- fields along an actual geodesic --------------------------------------------


def _check_record(fld: ModelJacobiField, geo: GeodesicRecord):
    if abs(geo.T - fld.r) > 1e-9 * max(1.0, fld.r) or abs(geo.eps - fld.eps) > 0:
        raise ValueError("field parameters do not match the geodesic record")
    if geo.steps % 2:
        raise ValueError("Simpson quadrature needs an even number of steps")


def field_on_geodesic(model: ModelSpace, geo: GeodesicRecord, fld: ModelJacobiField, U=None):
    """Body components of the model field and of its hat-covariant derivative on the grid."""
    _check_record(fld, geo)
    U = transport_path(model, geo) if U is None else U
    t = geo.t
    xi0 = geo.tangent[0]
    n = model.n
    gh = np.append(xi0[:n], 0.0)
    jgh = np.append(_j_horizontal(xi0[:n]), 0.0)
    ez = np.eye(model.dim)[-1]
    h, v = fld.h, fld.v
    vert = ez - (v / h**2) * gh if h > 0 else ez

    def coeffs(order):
        X = np.zeros((t.size, model.dim))
        X[:, :n] = fld.X(t, order)
        out = X
        if fld.a0 or fld.a1:
            out = out + np.multiply.outer(fld.a(t, order) / h, jgh)
            # with [X_i, Y_i] = -Z the vertical part enters with a plus sign
            out = out + np.multiply.outer(fld.b(t, order), vert)
        return out

    y, dy = coeffs(0), coeffs(1)
    Y = np.einsum("tij,tj->ti", U, y)
    DY = np.einsum("tij,tj->ti", U, dy)
    return Y, DY


def _project_complement(geo: GeodesicRecord, u: np.ndarray) -> np.ndarray:
    """Drop the components of ``u`` along ``gamma'_H(0)`` and ``J gamma'_H(0)``."""
    n = u.size
    e = geo.tangent[0][:n]
    ne = np.linalg.norm(e)
    if ne == 0:
        return u.copy()
    e = e / ne
    je = _j_horizontal(e)
    return u - (u @ e) * e - (u @ je) * je


def model_field_for(model: ModelSpace, geo: GeodesicRecord, a0=0.0, a1=0.0, u0=None, u1=None, bounds=None) -> ModelJacobiField:
    """Model field along ``geo`` with ``K1, K2`` from the model's curvature constants.

    ``u0, u1`` are projected onto the complement of ``gamma'_H(0), J gamma'_H(0)``.
    """
    bounds = bounds or curvature_constants(model)
    K = k_constants(geo.h, geo.v, bounds.k1, bounds.k2)
    zero = np.zeros(model.n)
    u0 = zero if u0 is None else _project_complement(geo, np.asarray(u0, dtype=float)[: model.n])
    u1 = zero if u1 is None else _project_complement(geo, np.asarray(u1, dtype=float)[: model.n])
    return model_jacobi(geo.T, geo.eps, geo.h, geo.v, K.K1, K.K2, a0, a1, u0, u1)


def _hor(vecs, n):
    return vecs[..., :n]


def correction_terms(model: ModelSpace, geo: GeodesicRecord, fld: ModelJacobiField, Y=None) -> float:
    """Curvature correction integrals; they cancel exactly on constant-curvature models."""
    if Y is None:
        Y, _ = field_on_geodesic(model, geo, fld)
    n = model.n
    xi = geo.tangent.copy()
    xi[:, -1] = 0.0
    R = model.tanno_R
    # <R(gamma'_H, Y) Y, gamma'_H>
    RYY = np.einsum("ta,tb,abij,tj->ti", xi, Y, R, Y)
    term_r = np.einsum("ti,ti->t", _hor(RYY, n), _hor(xi, n))
    t = geo.t
    a2 = fld.a(t) ** 2 if (fld.a0 or fld.a1) else np.zeros_like(t)
    X2 = np.sum(fld.X(t) ** 2, axis=-1)
    return float(
        -simpson(term_r, x=t)
        + (fld.K1 - fld.v**2) * simpson(a2, x=t)
        + (fld.K2 - fld.v**2 / 4) * simpson(X2, x=t)
    )


def index_closed_form(fld: ModelJacobiField, model: ModelSpace | None = None, geo: GeodesicRecord | None = None) -> float:
    """Index of a model field from its boundary data plus curvature corrections.

    Without a model and geodesic the corrections are taken to vanish, which is
    exact for constant-curvature models.
    """
    val = _main_terms(fld)
    if model is not None and geo is not None:
        val += correction_terms(model, geo, fld)
    return float(val)


def _inner(eps, A, B):
    w = np.ones(A.shape[-1])
    w[-1] = 1.0 / eps
    return np.einsum("...i,...i,i->...", A, B, w)


def _fd_derivative(Y, dt):
    """Fourth-order finite differences along the first axis."""
    D = np.empty_like(Y)
    D[2:-2] = (Y[:-4] - 8 * Y[1:-3] + 8 * Y[3:-1] - Y[4:]) / (12 * dt)
    for i in (0, 1):
        D[i] = (-25 * Y[i] + 48 * Y[i + 1] - 36 * Y[i + 2] + 16 * Y[i + 3] - 3 * Y[i + 4]) / (12 * dt)
        j = -1 - i
        D[j] = (25 * Y[j] - 48 * Y[j - 1] + 36 * Y[j - 2] - 16 * Y[j - 3] + 3 * Y[j - 4]) / (12 * dt)
    return D


def index_quadrature(model: ModelSpace, geo: GeodesicRecord, Y, DY=None) -> float:
    """Index form ``int <nabla^eps Y, hat nabla^eps Y> + <hat R(gamma', Y) gamma', Y>``.

    ``Y`` holds body components on the grid of ``geo``; ``DY`` optionally holds
    the hat-covariant derivative (otherwise obtained by finite differences).
    ``nabla^eps = 2 nabla^LC - hat nabla^eps`` is the adjoint connection.
    """
    eps = geo.eps
    if eps <= 0:
        raise ValueError("the index form needs eps > 0")
    Y = np.asarray(Y, dtype=float)
    xi = geo.tangent
    hat = model.hat_connection(eps)
    adj = 2.0 * model.lc_connection(eps) - hat
    hatY = np.einsum("ta,aij,tj->ti", xi, hat, Y)
    if DY is None:
        DY = _fd_derivative(Y, geo.T / geo.steps) + hatY
    Ydot = DY - hatY
    adjD = Ydot + np.einsum("ta,aij,tj->ti", xi, adj, Y)
    Rh = model.hat_curvature(eps)
    RY = np.einsum("ta,tb,abij,tj->ti", xi, Y, Rh, xi)
    integrand = _inner(eps, adjD, DY) + _inner(eps, RY, Y)
    return float(simpson(integrand, x=geo.t))


def index_quadrature_lc(model: ModelSpace, geo: GeodesicRecord, Y, DY=None) -> float:
    """Same index form written with the Levi-Civita connection of ``g_eps``."""
    eps = geo.eps
    Y = np.asarray(Y, dtype=float)
    xi = geo.tangent
    hat = model.hat_connection(eps)
    lc = model.lc_connection(eps)
    if DY is None:
        Ydot = _fd_derivative(Y, geo.T / geo.steps)
    else:
        Ydot = DY - np.einsum("ta,aij,tj->ti", xi, hat, Y)
    D = Ydot + np.einsum("ta,aij,tj->ti", xi, lc, Y)
    R = model.lc_curvature(eps)
    RY = np.einsum("ta,tb,abij,tj->ti", xi, Y, R, xi)
    return float(simpson(_inner(eps, D, D) + _inner(eps, RY, Y), x=geo.t))


# --- true Jacobi fields -----------------------------------------------------------


@dataclass
class IndexReport:
    value: float
    bound: float
    slack: float
    inputs: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"value": self.value, "bound": self.bound, "slack": self.slack, "inputs": self.inputs, "details": self.details}


def jacobi_propagator(model: ModelSpace, geo: GeodesicRecord) -> np.ndarray:
    """Fundamental matrix of the body-frame Jacobi system on ``[0, r]``.

    State ``(y, W)`` with ``W = D^LC y``: ``y' = W - Gamma(xi) y`` and
    ``W' = -Gamma(xi) W - R(y, xi) xi`` for the Levi-Civita connection of ``g_eps``.
    """
    eps = geo.eps
    d = model.dim
    lc = model.lc_connection(eps)
    R = model.lc_curvature(eps)
    ps = momentum_path(model, eps, geo.p0, geo.T, geo.steps)

    def mat(p):
        xi = sharp(p, eps)
        G = np.einsum("a,aij->ij", xi, lc)
        K = np.einsum("abij,b,j->ia", R, xi, xi)  # y -> R(y, xi) xi
        M = np.zeros((2 * d, 2 * d))
        M[:d, :d] = -G
        M[:d, d:] = np.eye(d)
        M[d:, :d] = -K
        M[d:, d:] = -G
        return M

    mats = [mat(p) for p in ps]
    h = geo.T / geo.steps
    Phi = np.eye(2 * d)
    for i in range(geo.steps):
        M0, Mm, M1 = mats[2 * i], mats[2 * i + 1], mats[2 * i + 2]
        k1 = M0 @ Phi
        k2 = Mm @ (Phi + 0.5 * h * k1)
        k3 = Mm @ (Phi + 0.5 * h * k2)
        k4 = M1 @ (Phi + h * k3)
        Phi = Phi + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    return Phi


def jacobi_boundary_fields(model: ModelSpace, geo: GeodesicRecord, Y0: np.ndarray, Yr: np.ndarray, Phi=None):
    """Initial derivatives ``W0`` of the Jacobi fields with ``Y(0) = Y0``, ``Y(r) = Yr`` (columns)."""
    d = model.dim
    Phi = jacobi_propagator(model, geo) if Phi is None else Phi
    A, B = Phi[:d, :d], Phi[:d, d:]
    cond = np.linalg.cond(B)
    if not np.isfinite(cond) or cond > 1e10:
        raise ConjugatePoint(f"endpoint is conjugate along the geodesic (cond={cond:.2e})")
    W0 = np.linalg.solve(B, Yr - A @ Y0)
    return W0, Phi


def index_sum(model: ModelSpace, eps: float, x, y, steps: int = 128, sol=None, bounds=None) -> IndexReport:
    """Sum of indices of the Jacobi fields ending at the parallel image of an orthonormal H-basis."""
    if eps <= 0:
        raise ValueError("index_sum needs eps > 0")
    x = as_array(x, model.dim)
    y = as_array(y, model.dim)
    sol = sol or solve_bvp(model, eps, x, y, steps=steps)
    if sol.multiplicity_hint > 1:
        raise CutLocus("pair is near the cut locus")
    geo, _ = geodesic_between(model, eps, x, y, steps=steps, sol=sol)
    d, n = model.dim, model.n
    U = transport_path(model, geo)
    P = U[-1]
    E = np.eye(d)[:, :n]
    W0, Phi = jacobi_boundary_fields(model, geo, E, P @ E)
    Yr = Phi[:d, :d] @ E + Phi[:d, d:] @ W0
    Wr = Phi[d:, :d] @ E + Phi[d:, d:] @ W0
    vals = _inner(eps, Yr.T, Wr.T) - _inner(eps, E.T, W0.T)
    value = float(np.sum(vals))
    bounds = bounds or curvature_constants(model)
    K = k_constants(geo.h, geo.v, bounds.k1, bounds.k2)
    if geo.h < H_MIN:
        bound = 0.0
    else:
        bound = 2 * g_sas(geo.r, K.K1) + (2 * (n - 2) * g_rie(geo.r, K.K2) if n > 2 else 0.0)
    return IndexReport(
        value=value,
        bound=float(bound),
        slack=float(bound - value),
        inputs={"model": model.spec(), "eps": eps, "x": x.tolist(), "y": y.tolist()},
        details={"r": geo.r, "h": geo.h, "v": geo.v, "K1": K.K1, "K2": K.K2, "per_field": vals.tolist(), "bc_residual": float(np.abs(Yr - P @ E).max())},
    )


def model_index_sum(model: ModelSpace, geo: GeodesicRecord, bounds=None) -> float:
    """Index sum of the model fields used in the bound: ``gamma'_H / h``, the ``a``-field and the ``u``-fields.

    They share boundary data with an orthonormal H-basis and its parallel image,
    so by the Index Lemma this dominates :func:`index_sum`.
    """
    n = model.n
    xi = geo.tangent[0][:n]
    e1 = xi / np.linalg.norm(xi)
    basis = _complement_basis_h(e1)
    total = 0.0
    fa = model_field_for(model, geo, 1.0, 1.0, bounds=bounds)
    total += index_closed_form(fa, model, geo)
    for w in basis:
        fw = model_field_for(model, geo, 0.0, 0.0, w, w, bounds=bounds)
        total += index_closed_form(fw, model, geo)
    return float(total)


def _complement_basis_h(e1: np.ndarray) -> list:
    """Orthonormal basis of the complement of ``span{e1, J e1}`` in H."""
    n = e1.size
    je = _j_horizontal(e1)
    out = []
    for v in np.eye(n):
        for e in [e1, je] + out:
            v = v - (v @ e) * e
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            out.append(v / nv)
        if len(out) == n - 2:
            break
    return out


# --- Hessian comparison -----------------------------------------------------------


def _probe_point(model: ModelSpace, y, u, s):
    """``y * exp(s u)``: a Tanno geodesic through ``y`` for horizontal ``u`` on these models."""
    if model.is_two_step_nilpotent:
        from .geodesics import heis_mul

        return heis_mul(np.asarray(y, float), s * np.asarray(u, float))
    from .geodesics import left_translate_flow

    return left_translate_flow(model, y, u, s)


def _warm_distance(model, eps, x, z, p_guess, steps):
    sol = solve_bvp(model, eps, x, z, steps=steps, p_guess=p_guess)
    return sol.r


def second_derivative(model, eps, x, y, u, sol, steps, step=None):
    """Central second difference of ``s -> d_eps(x, y * exp(s u))`` at ``s = 0``."""
    s = step or max(1e-4, sol.r * 1e-3)
    fp = _warm_distance(model, eps, x, _probe_point(model, y, u, s), sol.p, steps)
    fm = _warm_distance(model, eps, x, _probe_point(model, y, u, -s), sol.p, steps)
    return (fp + fm - 2 * sol.r) / s**2


def hessian_check(model: ModelSpace, eps: float, x, y, steps: int = 128, bounds=None) -> list[IndexReport]:
    """Finite-difference Tanno Hessians of ``r_eps,x`` at ``y`` against the comparison bounds.

    Returns reports for the radial, J-radial and (for n > 2) w directions plus
    the horizontal trace.
    """
    x = as_array(x, model.dim)
    y = as_array(y, model.dim)
    if np.linalg.norm(x - y) < 1e-12:
        raise ValueError("the distance is not smooth at x = y")
    sol = solve_bvp(model, eps, x, y, steps=steps)
    if sol.multiplicity_hint > 1 or sol.conjugate:
        raise CutLocus("pair is near the cut locus")
    geo, _ = geodesic_between(model, eps, x, y, steps=steps, sol=sol)
    n = model.n
    r, h, v = geo.r, geo.h, geo.v
    if h < H_MIN:
        raise DegenerateHorizontal("horizontal part of the gradient vanishes")
    bounds = bounds or curvature_constants(model)
    K = k_constants(h, v, bounds.k1, bounds.k2)
    uh = geo.tangent[-1][:n]
    e1 = uh / np.linalg.norm(uh)

    def hess(w):
        return second_derivative(model, eps, x, y, np.append(w, 0.0), sol, steps)

    common = {"model": model.spec(), "eps": eps, "x": x.tolist(), "y": y.tolist(), "r": r, "h": h, "v": v, "K1": K.K1, "K2": K.K2}
    h_rad = hess(e1)
    h_j = hess(_j_horizontal(e1))
    reports = [
        IndexReport(h_rad, (1 - h) / r, (1 - h) / r - h_rad, dict(common, direction="radial")),
        IndexReport(h_j, f_sas(r, K.K1), f_sas(r, K.K1) - h_j, dict(common, direction="J-radial")),
    ]
    trace = h_rad + h_j
    for i, w in enumerate(_complement_basis_h(e1)):
        hw = hess(w)
        trace += hw
        b = f_rie(r, K.K2)
        reports.append(IndexReport(hw, b, b - hw, dict(common, direction=f"w{i}")))
    tb = f_sas(r, K.K1) + ((n - 2) * f_rie(r, K.K2) if n > 2 else 0.0)
    reports.append(IndexReport(trace, tb, tb - trace, dict(common, direction="trace")))
    return reports


# --- expansion of the sub-Riemannian distance -------------------------------------------


def decompose_covector(model: ModelSpace, psi, gdot0):
    """``(c, a, u)`` with ``sharp_0 psi = c gdot + a J gdot + u`` (unit horizontal ``gdot``)."""
    n = model.n
    psi = as_array(psi, model.dim)
    if abs(psi[-1]) > 1e-12:
        raise ValueError("covector must annihilate Z")
    w = psi[:n]
    e = np.asarray(gdot0[:n], float)
    je = _j_horizontal(e)
    c, a = float(w @ e), float(w @ je)
    return c, a, w - c * e - a * je


def expansion_rhs(r, K1, K2, v, a0, a1, u0, u1) -> float:
    """Second-order coefficient bound of the coupled distance expansion."""
    val = 0.0
    if a0 or a1:
        F, G = f_sas(r, K1), g_sas(r, K1)
        val += (a1**2 + a0**2) * F - 2 * a0 * a1 * (F - G)
    nn = float(u0 @ u0 + u1 @ u1)
    if nn > 0:
        sr = sk_ck(K2, r).s
        val += nn * g_rie(r, K2) + (nn - 2 * float(u1 @ _cmul(np.exp(0.5j * r * v), u0))) / sr
    return float(val)


def expansion_check(
    model: ModelSpace,
    x,
    y,
    psi0,
    psi1,
    t_list=None,
    steps: int = 128,
    bounds=None,
    fit_tol: float = 1e-5,
    vertical_lift: bool = False,
):
    """Fit ``f(t) = d_0(exp_0(t psi0), exp_0(t P_0 psi1))`` and compare with the expansion bounds.

    Returns ``(report, table)`` where the report's value is the fitted second
    coefficient ``alpha``, ``details`` holds ``beta`` and ``c1 - c0``, and
    ``table`` lists ``(t, f(t))``.

    With ``vertical_lift`` the covectors get the Z-component ``c_j v``, which is
    the limit of the covectors ``flat_eps(c_j gamma_eps' + ...)`` as eps -> 0.
    For ``v != 0`` and ``c_j a_k != 0`` this changes ``alpha``: the unlifted
    curves leave the geodesic's osculating direction and pick up a cross term.
    """
    from .geodesics import flow_endpoint
    from .transport import transport_matrix

    x = as_array(x, model.dim)
    y = as_array(y, model.dim)
    sol = solve_bvp(model, 0.0, x, y, steps=steps)
    if sol.multiplicity_hint > 1 or sol.conjugate:
        raise CutLocus("pair is near the sub-Riemannian cut locus")
    geo, _ = geodesic_between(model, 0.0, x, y, steps=steps, sol=sol)
    r = geo.r
    if t_list is None:
        tmax = 0.05 * r
        t_list = np.linspace(-tmax, tmax, 9)
    t_list = np.asarray(t_list, dtype=float)
    P = transport_matrix(model, geo)
    psi0 = as_array(psi0, model.dim)
    psi1 = as_array(psi1, model.dim)
    c0, a0, u0 = decompose_covector(model, psi0, geo.tangent[0])
    c1, a1, u1 = decompose_covector(model, psi1, geo.tangent[0])
    psi1_y = np.append(P[:-1, :-1] @ psi1[:-1], 0.0)
    if vertical_lift:
        psi0 = psi0.copy()
        psi0[-1] = c0 * geo.v
        psi1_y[-1] = c1 * geo.v
    fvals = []
    for t in t_list:
        if t == 0:
            fvals.append(r)
            continue
        xt, _ = flow_endpoint(model, 0.0, x, t * psi0, 1.0, 32)
        yt, _ = flow_endpoint(model, 0.0, y, t * psi1_y, 1.0, 32)
        fvals.append(_warm_distance(model, 0.0, xt, yt, sol.p, steps))
    fvals = np.array(fvals)
    deg = min(4, len(t_list) - 1)
    coef, res, *_ = np.polyfit(t_list, fvals, deg, full=True)
    fit = np.polyval(coef, t_list)
    resid = float(np.abs(fit - fvals).max())
    if resid > fit_tol * max(1.0, r):
        from .errors import FitFailure

        raise FitFailure(f"polynomial fit residual {resid:.2e} too large")
    beta = float(coef[-2])
    alpha = float(2 * coef[-3])
    bounds = bounds or curvature_constants(model)
    v = geo.v
    K1 = bounds.k1 + v * v
    K2 = bounds.k2 + v * v / 4
    rhs = expansion_rhs(r, K1, K2, v, a0, a1, u0, u1)
    rep = IndexReport(
        value=alpha,
        bound=rhs,
        slack=rhs - alpha,
        inputs={"model": model.spec(), "x": x.tolist(), "y": y.tolist(), "psi0": psi0.tolist(), "psi1": psi1.tolist()},
        details={"vertical_lift": vertical_lift, "beta": beta, "c1_minus_c0": c1 - c0, "r": r, "v": v, "K1": K1, "K2": K2, "a0": a0, "a1": a1, "fit_residual": resid, "f0": float(coef[-1])},
    )
    return rep, np.column_stack([t_list, fvals])
