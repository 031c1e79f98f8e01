"""Generalized trigonometric functions and the scalar comparison functions.

``s_k`` and ``c_k`` solve ``y'' + k y = 0`` with ``(y, y')(0) = (0, 1)`` and
``(1, 0)``.  The comparison functions are logarithmic derivatives built from
them::

    F_Rie(r, k) = d/dr log |s_k(r)|
    F_Sas(r, k) = d/dr log |2 - 2 c_k(r) - k r s_k(r)| / k^2
    G_Rie(r, k) = 2 d/dr log |c_k(r/2)|
    G_Sas(r, k) = 2 d/dr log |s_k(r/2) - (r/2) c_k(r/2)| / |k|

The Sasakian denominators vanish to fourth order in ``k``; every quantity is
therefore evaluated through entire functions of ``x = k t^2`` (power series
for ``|x| <= 1``, closed forms otherwise) so results are smooth through
``k = 0``.

All functions accept scalars or numpy arrays.  The public functions raise
:class:`~sasaki.errors.PoleError` at a pole or past the first conjugate
radius; the ``*_vec`` variants return ``nan`` there instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .errors import PoleError

__all__ = [
    "TrigPair",
    "KPair",
    "sk_ck",
    "s_k",
    "c_k",
    "f_rie",
    "f_sas",
    "g_rie",
    "g_sas",
    "f_rie_vec",
    "f_sas_vec",
    "g_rie_vec",
    "g_sas_vec",
    "k_constants",
    "phi_scaled",
    "one_minus_c_over_k",
    "t_minus_s_over_k",
    "POLE_RTOL",
    "SERIES_RADIUS",
]

SERIES_RADIUS = 1.0
POLE_RTOL = 1e-12
_NTERMS = 18

# Coefficients c_n of sum_n c_n (-x)^n, x = k t^2.
_S = np.array([1.0 / factorial(2 * n + 1) for n in range(_NTERMS)])
_C = np.array([1.0 / factorial(2 * n) for n in range(_NTERMS)])
# (t - s_k(t)) / k = t^3 * sum (-x)^n / (2n+3)!
_S3 = np.array([1.0 / factorial(2 * n + 3) for n in range(_NTERMS)])
# (2 - 2 c_k(t) - k t s_k(t)) / k^2 = t^4 * sum (-x)^n (2n+2) / (2n+4)!
_D = np.array([(2.0 * n + 2.0) / factorial(2 * n + 4) for n in range(_NTERMS)])
# (s_k(t) - t c_k(t)) / k = t^3 * sum (-x)^n (2n+2) / (2n+3)!
_E = np.array([(2.0 * n + 2.0) / factorial(2 * n + 3) for n in range(_NTERMS)])


@dataclass(frozen=True)
class TrigPair:
    s: float
    c: float


@dataclass(frozen=True)
class KPair:
    K1: float
    K2: float


def _horner(coef, y):
    out = np.zeros_like(y)
    for c in coef[::-1]:
        out = out * y + c
    return out


def _prep(k, t):
    k = np.asarray(k, dtype=float)
    t = np.asarray(t, dtype=float)
    if not (np.all(np.isfinite(k)) and np.all(np.isfinite(t))):
        raise ValueError("non-finite input")
    k, t = np.broadcast_arrays(k, t)
    return k.astype(float), t.astype(float)


def _closed(k, t):
    """Closed-form (s, c, D, E) with q = sqrt|k|; valid away from k = 0."""
    q = np.sqrt(np.abs(k))
    pos = k > 0
    qt = q * t
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        sn = np.where(pos, np.sin(qt), np.sinh(qt))
        cs = np.where(pos, np.cos(qt), np.cosh(qt))
        s = sn / q
        c = cs
        D = (2.0 - 2.0 * c - k * t * s) / k**2
        E = (s - t * c) / k
    return s, c, D, E


def _all(k, t):
    """Return s_k(t), c_k(t), D_k(t), E_k(t) (see module docstring)."""
    k, t = _prep(k, t)
    x = k * t * t
    small = np.abs(x) <= SERIES_RADIUS
    y = -x
    s_ser = t * _horner(_S, y)
    c_ser = _horner(_C, y)
    D_ser = t**4 * _horner(_D, y)
    E_ser = t**3 * _horner(_E, y)
    ksafe = np.where(small, 1.0, k)
    s_cl, c_cl, D_cl, E_cl = _closed(ksafe, t)
    return (
        np.where(small, s_ser, s_cl),
        np.where(small, c_ser, c_cl),
        np.where(small, D_ser, D_cl),
        np.where(small, E_ser, E_cl),
    )


def _out(val):
    val = np.asarray(val)
    return float(val) if val.ndim == 0 else val


def s_k(k, t):
    return _out(_all(k, t)[0])


def c_k(k, t):
    return _out(_all(k, t)[1])


def sk_ck(k: float, t: float) -> TrigPair:
    """Return ``(s_k(t), c_k(t))``; ``t`` must be nonnegative."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be >= 0")
    s, c, _, _ = _all(k, t)
    return TrigPair(float(s), float(c))


def _angle_limit(k, r, limit):
    """Mask of k > 0 entries at or past the angle ``sqrt(k) r = limit``."""
    return (k > 0) & (np.sqrt(np.maximum(k, 0.0)) * r >= limit * (1 - 1e-14))


def _ratio(num, den, bad):
    bad = bad | (np.abs(den) < POLE_RTOL * (1.0 + np.abs(num)))
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(bad, np.nan, num / np.where(bad, 1.0, den))
    return val


def _check_r(r):
    if np.any(np.asarray(r) <= 0):
        raise ValueError("r must be > 0")


def f_rie_vec(r, k):
    k, r = _prep(k, r)
    s, c, _, _ = _all(k, r)
    return _out(_ratio(c, s, _angle_limit(k, r, np.pi)))


def f_sas_vec(r, k):
    k, r = _prep(k, r)
    _, _, D, E = _all(k, r)
    return _out(_ratio(E, D, _angle_limit(k, r, 2 * np.pi)))


def g_rie_vec(r, k):
    k, r = _prep(k, r)
    s, c, _, _ = _all(k, r / 2)
    return _out(_ratio(-k * s, c, _angle_limit(k, r, np.pi)))


def g_sas_vec(r, k):
    k, r = _prep(k, r)
    tau = r / 2
    s, _, _, E = _all(k, tau)
    return _out(_ratio(tau * s, E, _angle_limit(k, r, 2 * np.pi)))


def _strict(fn, r, k, name):
    _check_r(r)
    val = fn(r, k)
    if np.any(np.isnan(val)):
        raise PoleError(f"{name}: pole or past first conjugate radius at r={r}, k={k}")
    return val


def f_rie(r, k):
    """Riemannian Hessian comparison function ``s_k'(r) / s_k(r)``."""
    return _strict(f_rie_vec, r, k, "F_Rie")


def f_sas(r, k):
    """Sasakian Hessian comparison function; equals ``4/r`` at ``k = 0``."""
    return _strict(f_sas_vec, r, k, "F_Sas")


def g_rie(r, k):
    return _strict(g_rie_vec, r, k, "G_Rie")


def g_sas(r, k):
    """Sasakian index comparison function; ``6/r`` at ``k = 0`` and never negative."""
    return _strict(g_sas_vec, r, k, "G_Sas")


def k_constants(h: float, v: float, k1: float, k2: float) -> KPair:
    """Curvature aggregates ``K1 = k1 h^2 + v^2`` and ``K2 = k2 h^2 + v^2 / 4``."""
    return KPair(k1 * h * h + v * v, k2 * h * h + 0.25 * v * v)


def _entire(coef, power, k, t, closed):
    k, t = _prep(k, t)
    x = k * t * t
    small = np.abs(x) <= SERIES_RADIUS
    ser = t**power * _horner(coef, -x)
    ksafe = np.where(small, 1.0, k)
    s, c, _, _ = _closed(ksafe, t)
    return np.where(small, ser, closed(ksafe, t, s, c))


_S2 = np.array([1.0 / factorial(2 * n + 2) for n in range(_NTERMS)])


def one_minus_c_over_k(k, t):
    """``(1 - c_k(t)) / k``, entire in ``k``."""
    return _out(_entire(_S2, 2, k, t, lambda k, t, s, c: (1.0 - c) / k))


def t_minus_s_over_k(k, t):
    """``(t - s_k(t)) / k``, entire in ``k``."""
    return _out(_entire(_S3, 3, k, t, lambda k, t, s, c: (t - s) / k))


def phi_scaled(t, r, K1, eps_coef=0.0):
    """Scaled model function ``phi(t) / K1^2`` of the Sasakian Jacobi field.

    ``phi`` solves ``phi'' + K1 phi = C`` (a constant) with ``phi(0) = 0`` and
    the integral constraint ``int_0^r phi = eps_coef * r * C``.  Returns
    ``(phi, phi', phi'')`` at ``t``; finite as ``K1 -> 0``.
    """
    s_t, c_t, _, _ = _all(K1, t)
    A = -(t_minus_s_over_k(K1, r) - eps_coef * r)
    B = one_minus_c_over_k(K1, r)
    S2_t = one_minus_c_over_k(K1, t)
    phi = A * s_t + B * S2_t
    dphi = A * c_t + B * s_t
    ddphi = -K1 * A * s_t + B * c_t
    return _out(phi), _out(dphi), _out(ddphi)
