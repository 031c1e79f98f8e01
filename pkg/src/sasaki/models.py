"""Left-invariant Sasakian model spaces given by structure constants.

A model is a Lie algebra with adapted basis ``(X_1..X_m, Y_1..Y_m, Z)``.
All tensors are left-invariant, so they are stored as constant arrays acting
on frame components.  Conventions:

* ``C[a, b, c]`` is the structure tensor, ``[E_a, E_b] = sum_c C[a, b, c] E_c``.
* ``d theta(A, B) = -theta([A, B])`` on left-invariant fields, and
  ``<J A, B> = d theta(A, B)``; with ``J X_i = Y_i`` this forces
  ``[X_i, Y_i] = -Z``.
* A connection is a stack ``gamma[a]`` of matrices with
  ``nabla_{E_a} B = gamma[a] @ B`` for left-invariant ``B``.
* ``R(A, B) = [nabla_A, nabla_B] - nabla_{[A, B]}`` and
  ``Sec(A, B) = <R(A, B) B, A> / |A ^ B|^2``.

Points are coordinate vectors in exponential coordinates of the first kind,
``x <-> exp(sum_a x_a E_a)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np

from .errors import UnsupportedModel, VerticalAtZero

FAMILIES = ("heisenberg", "constant_curvature")


@dataclass(frozen=True)
class SplitVector:
    """Tangent vector split as horizontal frame components plus a Z component."""

    h_part: np.ndarray
    v_part: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "h_part", np.asarray(self.h_part, dtype=float).copy())
        object.__setattr__(self, "v_part", float(self.v_part))

    @classmethod
    def from_array(cls, arr) -> "SplitVector":
        arr = np.asarray(arr, dtype=float)
        return cls(arr[:-1], arr[-1])

    def to_array(self) -> np.ndarray:
        return np.append(self.h_part, self.v_part)

    @property
    def n(self) -> int:
        return self.h_part.size

    def J(self) -> "SplitVector":
        return SplitVector(_j_horizontal(self.h_part), 0.0)

    def complex_mul(self, z: complex) -> "SplitVector":
        """``z . u = Re(z) u + Im(z) J u`` on the horizontal part."""
        h = z.real * self.h_part + z.imag * _j_horizontal(self.h_part)
        return SplitVector(h, 0.0)

    def norm_sq(self, eps: float) -> float:
        if eps == 0:
            if self.v_part != 0:
                raise VerticalAtZero("vertical component has infinite g_0 norm")
            return float(self.h_part @ self.h_part)
        return float(self.h_part @ self.h_part + self.v_part**2 / eps)


def _j_horizontal(h):
    m = h.shape[-1] // 2
    out = np.empty_like(h)
    out[..., :m] = -h[..., m:]
    out[..., m:] = h[..., :m]
    return out


def as_array(vec, dim=None) -> np.ndarray:
    if isinstance(vec, SplitVector):
        return vec.to_array()
    arr = np.asarray(vec, dtype=float)
    if dim is not None and arr.shape[-1] != dim:
        raise ValueError(f"expected a vector of length {dim}, got {arr.shape}")
    return arr


def connection_curvature(gamma: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Curvature ``R[a, b] = gamma[a] gamma[b] - gamma[b] gamma[a] - gamma([E_a, E_b])``."""
    comm = np.einsum("aij,bjk->abik", gamma, gamma)
    comm = comm - comm.transpose(1, 0, 2, 3)
    return comm - np.einsum("abc,cij->abij", C, gamma)


def levi_civita(C: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Levi-Civita connection of the left-invariant metric with Gram matrix ``G``.

    Koszul formula for left-invariant fields:
    ``2 <nabla_A B, C> = <[A,B],C> - <[B,C],A> + <[C,A],B>``.
    """
    CG = np.einsum("abd,dc->abc", C, G)  # <[E_a, E_b], E_c>
    L = 0.5 * (CG - CG.transpose(2, 0, 1) + CG.transpose(1, 2, 0))
    # L[a, b, c] = <nabla_a E_b, E_c>; gamma[a][e, b] = sum_c L[a, b, c] Ginv[c, e]
    return np.einsum("abc,ce->aeb", L, np.linalg.inv(G))


def _psi_quad(q):
    """Coefficient of ``A^2`` in ``A / (1 - exp(-A))`` when ``A^3 = -q A``."""
    q = np.asarray(q, dtype=float)
    small = np.abs(q) < 1e-2
    qs = np.where(small, q, 0.0)
    ser = 1 / 12 + qs / 720 + qs**2 / 30240 + qs**3 / 1209600 + qs**4 / 47900160
    s = np.sqrt(np.abs(np.where(small, 1.0, q)))
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = (1 - (s / 2) / np.tan(s / 2)) / s**2
        neg = ((s / 2) / np.tanh(s / 2) - 1) / s**2
    return np.where(small, ser, np.where(q > 0, pos, neg))


@dataclass(frozen=True, eq=False)
class ModelSpace:
    """Immutable Sasakian model; see :func:`make_model`."""

    family: str
    m: int
    kappa: float
    structure_constants: np.ndarray = field(repr=False)

    def __post_init__(self):
        C = np.array(self.structure_constants, dtype=float)
        C.setflags(write=False)
        object.__setattr__(self, "structure_constants", C)

    @property
    def n(self) -> int:
        return 2 * self.m

    @property
    def dim(self) -> int:
        return 2 * self.m + 1

    @property
    def C(self) -> np.ndarray:
        return self.structure_constants

    def spec(self) -> dict:
        return {"family": self.family, "m": self.m, "kappa": self.kappa}

    @cached_property
    def J(self) -> np.ndarray:
        d, m = self.dim, self.m
        J = np.zeros((d, d))
        for i in range(m):
            J[m + i, i] = 1.0
            J[i, m + i] = -1.0
        J.setflags(write=False)
        return J

    @cached_property
    def ad(self) -> np.ndarray:
        """``ad[a] @ B = [E_a, B]``."""
        return np.ascontiguousarray(self.C.transpose(0, 2, 1))

    @cached_property
    def is_two_step_nilpotent(self) -> bool:
        return bool(np.allclose(np.einsum("aij,bjk->abik", self.ad, self.ad), 0.0))

    def gram(self, eps: float) -> np.ndarray:
        """Frame Gram matrix of ``g_eps``; ``eps = 0`` gives the degenerate ``g_H``."""
        G = np.eye(self.dim)
        G[-1, -1] = 0.0 if eps == 0 else 1.0 / eps
        return G

    @cached_property
    def tanno(self) -> np.ndarray:
        """Tanno connection: ``pi_H nabla^g`` on horizontal pairs, ``nabla_Z = ad_Z``, ``nabla Z = 0``."""
        d = self.dim
        lc = levi_civita(self.C, np.eye(d))
        gamma = np.zeros((d, d, d))
        gamma[:-1, :-1, :-1] = lc[:-1, :-1, :-1]
        gamma[-1, :-1, :-1] = self.ad[-1][:-1, :-1]
        gamma.setflags(write=False)
        return gamma

    @cached_property
    def tanno_R(self) -> np.ndarray:
        R = connection_curvature(self.tanno, self.C)
        R.setflags(write=False)
        return R

    def hat_connection(self, eps: float) -> np.ndarray:
        """``hat nabla^eps_A B = nabla_A B + theta(A) J B / eps``."""
        gamma = np.array(self.tanno)
        gamma[-1] = gamma[-1] + self.J / eps
        return gamma

    def hat_curvature(self, eps: float) -> np.ndarray:
        return connection_curvature(self.hat_connection(eps), self.C)

    def lc_connection(self, eps: float) -> np.ndarray:
        return levi_civita(self.C, self.gram(eps))

    def lc_curvature(self, eps: float) -> np.ndarray:
        return connection_curvature(self.lc_connection(eps), self.C)

    def torsion(self, gamma=None) -> np.ndarray:
        """``T[a, b] = nabla_a E_b - nabla_b E_a - [E_a, E_b]`` as component vectors."""
        gamma = self.tanno if gamma is None else gamma
        d = self.dim
        T = np.empty((d, d, d))
        for a in range(d):
            for b in range(d):
                T[a, b] = gamma[a][:, b] - gamma[b][:, a] - self.C[a, b]
        return T

    def frame_matrix(self, x: np.ndarray) -> np.ndarray:
        """Columns are the left-invariant frame ``E_a`` at coordinates ``x`` (batched).

        In first-kind coordinates ``E_a(x) = psi(ad_x) e_a`` with
        ``psi(z) = z / (1 - exp(-z))``.
        """
        x = np.asarray(x, dtype=float)
        A = np.einsum("...a,aij->...ij", x, self.ad)
        eye = np.eye(self.dim)
        if self.is_two_step_nilpotent:
            return eye + 0.5 * A
        if self.dim == 3 and np.allclose(np.trace(self.ad, axis1=1, axis2=2), 0):
            # unimodular 3-dim algebra: A^3 = -q A, so psi(A) = I + A/2 + f(q) A^2
            q = (
                A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
                + A[..., 0, 0] * A[..., 2, 2] - A[..., 0, 2] * A[..., 2, 0]
                + A[..., 1, 1] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 1]
            )
            return eye + 0.5 * A + _psi_quad(q)[..., None, None] * (A @ A)
        # psi(A)^{-1} = sum_n (-A)^n / (n+1)!
        inv = np.broadcast_to(eye / _FACT[21], A.shape).copy()
        for k in range(19, -1, -1):
            inv = eye / _FACT[k + 1] - A @ inv
        return np.linalg.inv(inv)

    def verify_structure(self) -> dict:
        """Residuals of the defining identities (all should vanish)."""
        C, d = self.C, self.dim
        gamma = self.tanno
        G = np.eye(d)
        T = self.torsion()
        jac = (
            np.einsum("bcd,ade->abce", C, C)
            + np.einsum("cad,bde->abce", C, C)
            + np.einsum("abd,cde->abce", C, C)
        )
        dtheta = -C[:, :, -1]
        hor = slice(0, d - 1)
        jg = np.einsum("ai,ab->ib", self.J, G)  # <J E_i, E_b>
        nablaT = (
            np.einsum("aij,bcj->abci", gamma, T)
            - np.einsum("ajb,jci->abci", gamma, T)
            - np.einsum("ajc,bji->abci", gamma, T)
        )
        res = {
            "jacobi_identity": np.abs(jac).max(),
            "reeb_dtheta": np.abs(dtheta[-1]).max(),
            "j_dtheta": np.abs(jg[hor, hor] - dtheta[hor, hor]).max(),
            "nabla_theta": np.abs(gamma[:, -1, :]).max(),
            "nabla_Z": np.abs(gamma[:, :, -1]).max(),
            "metric": np.abs(gamma + gamma.transpose(0, 2, 1)).max(),
            "torsion_horizontal": np.abs(
                T[hor, hor] - dtheta[hor, hor, None] * np.eye(d)[-1]
            ).max(),
            "torsion_reeb": np.abs(T[-1]).max(),
            "torsion_JZ": np.abs(
                T[-1] @ self.J.T + (self.J @ T[-1].T).T
            ).max(),
            "nabla_J": np.abs(gamma @ self.J - self.J @ gamma).max(),
            "nabla_T": np.abs(nablaT).max(),
        }
        return {k: float(v) for k, v in res.items()}


_FACT = np.cumprod(np.concatenate([[1.0], np.arange(1.0, 30.0)]))


def _heisenberg_constants(m: int) -> np.ndarray:
    d = 2 * m + 1
    C = np.zeros((d, d, d))
    for i in range(m):
        C[i, m + i, -1] = -1.0
        C[m + i, i, -1] = 1.0
    return C


def make_model(family: str, m: int = 1, kappa: float = 0.0) -> ModelSpace:
    """Build a Sasakian model.

    ``heisenberg`` is the Heisenberg group of rank ``m`` (flat Tanno
    connection).  ``constant_curvature`` is the rank-one family with
    pseudo-Hermitian sectional curvature ``kappa`` (SU(2) for ``kappa > 0``,
    SL(2) for ``kappa < 0``): ``[X, Y] = -Z``, ``[Z, X] = -kappa Y``,
    ``[Y, Z] = -kappa X``.
    """
    if family not in FAMILIES:
        raise UnsupportedModel(f"unknown family {family!r}")
    m = int(m)
    if m < 1:
        raise UnsupportedModel("m must be >= 1")
    kappa = float(kappa)
    C = _heisenberg_constants(m)
    if family == "heisenberg":
        if kappa != 0.0:
            raise UnsupportedModel("heisenberg requires kappa = 0")
    else:
        if m != 1:
            raise UnsupportedModel(
                "constant_curvature is realised as a left-invariant structure only for m = 1"
            )
        X, Y, Z = 0, 1, 2
        C[Z, X, Y], C[X, Z, Y] = -kappa, kappa
        C[Y, Z, X], C[Z, Y, X] = -kappa, kappa
    return ModelSpace(family, m, kappa, C)


ModelLike = Union[ModelSpace, dict, str]


def load_model(spec: ModelLike) -> ModelSpace:
    """Accept a ModelSpace, a dict, inline JSON, or a path to a JSON file."""
    if isinstance(spec, ModelSpace):
        return spec
    if isinstance(spec, str):
        text = spec.strip()
        if not text.startswith("{"):
            with open(text) as fh:
                text = fh.read()
        spec = json.loads(text)
    return make_model(spec.get("family", "heisenberg"), spec.get("m", 1), spec.get("kappa", 0.0))


# --- tensors on split vectors -------------------------------------------------


def tanno_curvature(model: ModelSpace, u, v, w, at=None) -> SplitVector:
    """``R(u, v) w`` of the Tanno connection (``at`` is unused: the model is homogeneous)."""
    d = model.dim
    u, v, w = (as_array(a, d) for a in (u, v, w))
    out = np.einsum("a,b,abij,j->i", u, v, model.tanno_R, w)
    return SplitVector.from_array(out)


def metric_split(model: ModelSpace, eps: float, u, v) -> float:
    """``<u, v>`` in ``g_eps = g_H + g_V / eps``."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    u, v = as_array(u, model.dim), as_array(v, model.dim)
    if eps == 0:
        if u[-1] != 0 or v[-1] != 0:
            raise VerticalAtZero("g_0 is only defined on horizontal vectors")
        return float(u[:-1] @ v[:-1])
    return float(u[:-1] @ v[:-1] + u[-1] * v[-1] / eps)


def sectional(model: ModelSpace, a, b) -> float:
    a, b = as_array(a, model.dim), as_array(b, model.dim)
    num = np.einsum("a,b,abij,j,i->", a, b, model.tanno_R, b, a)
    den = (a @ a) * (b @ b) - (a @ b) ** 2
    return float(num / den)


def pseudo_hermitian_sectional(model: ModelSpace, w) -> float:
    """``K_{H,J}(w, w) = |w|^2 Sec(span{w, Jw})``."""
    w = as_array(w, model.dim)
    return float(w @ w) * sectional(model, w, model.J @ w)


def _complement_basis(model: ModelSpace, w: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the horizontal complement of ``{w, Jw}``."""
    n = model.n
    W = np.zeros((model.dim, 2))
    W[:, 0] = w / np.linalg.norm(w)
    W[:, 1] = model.J @ W[:, 0]
    P = np.eye(model.dim)[:, :n]
    P = P - W @ (W.T @ P)
    U, S, _ = np.linalg.svd(P, full_matrices=False)
    return U[:, S > 1e-8][:, : n - 2]


def ricci_h_jperp(model: ModelSpace, w) -> float:
    """``Ric_H(w, w) - K_{H,J}(w, w)`` (trace of ``<R(w, .) ., w>`` over the complement)."""
    w = as_array(w, model.dim)
    basis = _complement_basis(model, w)
    R = model.tanno_R
    return float(sum(np.einsum("a,b,abij,j,i->", w, u, R, u, w) for u in basis.T))


@dataclass(frozen=True)
class CurvatureBounds:
    k1: float
    k2: float
    k3: float
    degenerate: bool = False


def curvature_constants(model: ModelSpace, samples: int = 64, seed: int = 0) -> CurvatureBounds:
    """Sampled curvature bounds ``(k1, k2, k3)``.

    ``k1`` bounds ``Sec(w, Jw)``, ``k2`` bounds ``Sec(w, u)`` for ``u`` orthogonal
    to ``w, Jw``, and ``k3`` is the largest ``|<R(w, u) Jw, w>|``.  For ``m = 1``
    there is no such ``u``: ``k2`` is reported equal to ``k1`` and flagged.
    """
    rng = np.random.default_rng(seed)
    d, n = model.dim, model.n
    ws = list(np.eye(d)[:n])
    for _ in range(samples):
        w = np.append(rng.standard_normal(n), 0.0)
        ws.append(w / np.linalg.norm(w))
    R = model.tanno_R
    k1 = min(sectional(model, w, model.J @ w) for w in ws)
    if model.m == 1:
        return CurvatureBounds(k1, k1, 0.0, degenerate=True)
    k2, k3 = np.inf, 0.0
    for w in ws:
        basis = _complement_basis(model, w)
        coeffs = np.vstack([np.eye(basis.shape[1]), rng.standard_normal((4, basis.shape[1]))])
        for c in coeffs:
            u = basis @ (c / np.linalg.norm(c))
            k2 = min(k2, sectional(model, w, u))
            k3 = max(k3, abs(np.einsum("a,b,abij,j,i->", w, u, R, model.J @ w, w)))
    return CurvatureBounds(float(k1), float(k2), float(k3))
