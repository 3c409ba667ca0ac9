"""Discrete Lagrangian densities and the linear operators acting on them.

A density of kind ``three_point`` is a function ``L(a, b, c)`` and of kind
``four_point`` a function ``L(a, b, c, e)`` with every slot in ``R^d``.
Densities take flattened inputs: an array of shape ``(..., q*d)`` where ``q``
is the number of slots.

The operators below (DEL, Mm+, Mm-) are written as signed sums of slot
gradients evaluated on sub-tuples of a stencil. The term tables are shared
with :mod:`lagrangian_gp.kernels`, which applies the same operators to the
kernel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .mesh import FOUR_POINT, THREE_POINT, Mesh, StencilData, check_kind, n_slots, stencil_array

# (sign, slot differentiated, stencil entries forming the density arguments)
DEL_TERMS = {
    THREE_POINT: ((1.0, 0, (0, 1, 2)), (1.0, 1, (3, 0, 4)), (1.0, 2, (5, 6, 0))),
    FOUR_POINT: ((1.0, 0, (0, 1, 2, 3)), (1.0, 1, (4, 0, 5, 2)),
                 (1.0, 2, (6, 7, 0, 1)), (1.0, 3, (8, 6, 4, 0))),
}
MM_PLUS_TERMS = {
    THREE_POINT: ((1.0, 1, (3, 0, 4)),),
    FOUR_POINT: ((1.0, 1, (4, 0, 5, 2)), (1.0, 3, (8, 6, 4, 0))),
}
MM_MINUS_TERMS = {
    THREE_POINT: ((-1.0, 0, (0, 1, 2)), (-1.0, 2, (5, 6, 0))),
    FOUR_POINT: ((-1.0, 0, (0, 1, 2, 3)), (-1.0, 2, (6, 7, 0, 1))),
}
# stencil entries of the first sub-tuple (u, u^+, u_+[, u_+^+])
EV_TUPLE = {THREE_POINT: (0, 1, 2), FOUR_POINT: (0, 1, 2, 3)}

# slot pairs (plus, minus) of the telescopic terms F_k(plus) - F_k(minus)
DIVERGENCE_PAIRS = {
    THREE_POINT: ((0, 1), (0, 2), (1, 2)),
    FOUR_POINT: ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)),
}


class KindMismatchError(ValueError):
    pass


class Density:
    """Base class of discrete Lagrangian densities.

    Subclasses implement :meth:`eval`, :meth:`grad` and :meth:`hess` on
    flattened, possibly batched inputs.
    """

    kind: str
    d: int

    @property
    def n_slots(self) -> int:
        return n_slots(self.kind)

    @property
    def dim(self) -> int:
        return self.n_slots * self.d

    def eval(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hess(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.eval(x)

    def grad_slot(self, x, k: int):
        """Gradient with respect to slot ``k`` (0-based), shape ``(..., d)``."""
        return self.grad(x)[..., k * self.d:(k + 1) * self.d]

    def hess_slot(self, x, k: int, l: int):
        h = self.hess(x)
        return h[..., k * self.d:(k + 1) * self.d, l * self.d:(l + 1) * self.d]


def _flat(x, dim):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] == dim:
        return x
    if x.ndim >= 2 and x.shape[-2] * x.shape[-1] == dim:
        return x.reshape(x.shape[:-2] + (dim,))
    raise ValueError(f"density input of shape {x.shape} does not flatten to size {dim}")


class FunctionDensity(Density):
    """Density from plain callables on flattened inputs.

    ``hess`` may be omitted, in which case it is approximated by central
    differences of ``grad`` (only intended for tests).
    """

    def __init__(self, kind: str, d: int, f: Callable, grad: Callable, hess: Callable | None = None):
        check_kind(kind)
        self.kind, self.d = kind, d
        self._f, self._g, self._h = f, grad, hess

    def eval(self, x):
        return self._f(_flat(x, self.dim))

    def grad(self, x):
        return self._g(_flat(x, self.dim))

    def hess(self, x):
        x = _flat(x, self.dim)
        if self._h is not None:
            return self._h(x)
        return fd_jacobian(self._g, x)


class ConstantDensity(Density):
    def __init__(self, kind: str, d: int, value: float = 0.0):
        check_kind(kind)
        self.kind, self.d, self.value = kind, d, float(value)

    def eval(self, x):
        x = _flat(x, self.dim)
        return np.full(x.shape[:-1], self.value)

    def grad(self, x):
        return np.zeros_like(_flat(x, self.dim))

    def hess(self, x):
        x = _flat(x, self.dim)
        return np.zeros(x.shape + (self.dim,))


# --- finite differences (testing fallback) --------------------------------

def _fd_steps(x):
    return 1e-6 * (1.0 + np.abs(x))


def fd_grad(f: Callable, x) -> np.ndarray:
    """Central-difference gradient of a scalar function of a 1-D point."""
    x = np.asarray(x, dtype=float)
    h = _fd_steps(x)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        g[i] = (f(x + e) - f(x - e)) / (2 * h[i])
    return g


def fd_jacobian(g: Callable, x) -> np.ndarray:
    """Central-difference Jacobian of a vector function, batched over leading axes."""
    x = np.asarray(x, dtype=float)
    h = _fd_steps(x)
    cols = []
    for i in range(x.shape[-1]):
        e = np.zeros_like(x)
        e[..., i] = h[..., i]
        cols.append((np.asarray(g(x + e)) - np.asarray(g(x - e))) / (2 * h[..., i, None]))
    return np.stack(cols, axis=-1)


# --- operators ------------------------------------------------------------

def _stencils(s, kind):
    arr = stencil_array(s, kind) if not isinstance(s, np.ndarray) else np.asarray(s, dtype=float)
    single = isinstance(s, StencilData) or arr.ndim == 2
    if arr.ndim == 2:
        arr = arr[None]
    return arr, single


def _apply_terms(L: Density, s, terms) -> np.ndarray:
    arr, single = _stencils(s, L.kind)
    if arr.shape[-1] != L.d:
        raise ValueError(f"stencil has d={arr.shape[-1]}, density expects d={L.d}")
    out = np.zeros((arr.shape[0], L.d))
    for sign, slot, sub in terms:
        x = arr[:, list(sub), :].reshape(arr.shape[0], -1)
        out += sign * L.grad_slot(x, slot)
    return out[0] if single else out


def _check_kinds(L: Density, s, expected: str):
    if L.kind != expected:
        raise KindMismatchError(f"density kind {L.kind} is not {expected}")
    if isinstance(s, StencilData) and s.kind != expected:
        raise KindMismatchError(f"stencil kind {s.kind} is not {expected}")


def del_three_point(L: Density, s) -> np.ndarray:
    _check_kinds(L, s, THREE_POINT)
    return _apply_terms(L, s, DEL_TERMS[THREE_POINT])


def del_four_point(L: Density, s) -> np.ndarray:
    _check_kinds(L, s, FOUR_POINT)
    return _apply_terms(L, s, DEL_TERMS[FOUR_POINT])


def del_operator(L: Density, s) -> np.ndarray:
    """DEL(L) at one stencil (returns ``(d,)``) or a stack (returns ``(M, d)``)."""
    _check_kinds(L, s, L.kind)
    return _apply_terms(L, s, DEL_TERMS[L.kind])


def mm_plus(L: Density, s) -> np.ndarray:
    _check_kinds(L, s, L.kind)
    return _apply_terms(L, s, MM_PLUS_TERMS[L.kind])


def mm_minus(L: Density, s) -> np.ndarray:
    _check_kinds(L, s, L.kind)
    return _apply_terms(L, s, MM_MINUS_TERMS[L.kind])


def first_subtuple(s) -> np.ndarray:
    """Flattened density argument ``(u, u^+, u_+[, u_+^+])`` of a stencil."""
    kind = s.kind
    return s.points[list(EV_TUPLE[kind])].reshape(-1)


# --- gauge freedom --------------------------------------------------------

@dataclass(frozen=True)
class ScalarFunction:
    """Continuously differentiable ``R^d -> R`` with vectorised derivatives."""

    f: Callable
    grad: Callable
    hess: Callable

    @classmethod
    def zero(cls, d: int) -> "ScalarFunction":
        return cls(lambda u: np.zeros(np.shape(u)[:-1]),
                   lambda u: np.zeros(np.shape(u)),
                   lambda u: np.zeros(np.shape(u) + (d,)))

    @classmethod
    def linear(cls, p) -> "ScalarFunction":
        p = np.asarray(p, dtype=float)
        return cls(lambda u: np.asarray(u) @ p,
                   lambda u: np.broadcast_to(p, np.shape(u)).copy(),
                   lambda u: np.zeros(np.shape(u) + (p.size,)))

    @classmethod
    def cubic(cls, c0: float, g, A, t) -> "ScalarFunction":
        """``c0 + g.u + u.A.u/2 + sum_k t_k u_k^3`` with ``A`` symmetrised."""
        g, t = np.asarray(g, float), np.asarray(t, float)
        A = np.asarray(A, float)
        A = 0.5 * (A + A.T)
        return cls(
            lambda u: c0 + u @ g + 0.5 * np.einsum("...i,ij,...j->...", u, A, u) + (u**3) @ t,
            lambda u: g + u @ A + 3 * t * u**2,
            lambda u: A + np.einsum("...i,ij->...ij", 6 * t * u, np.eye(len(t))),
        )


@dataclass(frozen=True)
class DivergenceSpec:
    """Data of the gauge transformation ``L -> rho*L + div_t F + c``."""

    kind: str
    F: Sequence[ScalarFunction]
    c: float = 0.0
    rho: float = 1.0

    def __post_init__(self):
        check_kind(self.kind)
        if len(self.F) != len(DIVERGENCE_PAIRS[self.kind]):
            raise ValueError(f"{self.kind} divergence needs {len(DIVERGENCE_PAIRS[self.kind])} functions")
        if self.rho == 0:
            raise ValueError("rho must be nonzero")


class GaugeDensity(Density):
    def __init__(self, base: Density, g: DivergenceSpec):
        if base.kind != g.kind:
            raise KindMismatchError(f"divergence kind {g.kind} does not match density {base.kind}")
        self.base, self.g = base, g
        self.kind, self.d = base.kind, base.d

    def _slot(self, x, k):
        return x[..., k * self.d:(k + 1) * self.d]

    def eval(self, x):
        x = _flat(x, self.dim)
        out = self.g.rho * self.base.eval(x) + self.g.c
        for F, (p, m) in zip(self.g.F, DIVERGENCE_PAIRS[self.kind]):
            out = out + F.f(self._slot(x, p)) - F.f(self._slot(x, m))
        return out

    def grad(self, x):
        x = _flat(x, self.dim)
        out = self.g.rho * self.base.grad(x)
        d = self.d
        for F, (p, m) in zip(self.g.F, DIVERGENCE_PAIRS[self.kind]):
            out[..., p * d:(p + 1) * d] += F.grad(self._slot(x, p))
            out[..., m * d:(m + 1) * d] -= F.grad(self._slot(x, m))
        return out

    def hess(self, x):
        x = _flat(x, self.dim)
        out = self.g.rho * self.base.hess(x)
        d = self.d
        for F, (p, m) in zip(self.g.F, DIVERGENCE_PAIRS[self.kind]):
            out[..., p * d:(p + 1) * d, p * d:(p + 1) * d] += F.hess(self._slot(x, p))
            out[..., m * d:(m + 1) * d, m * d:(m + 1) * d] -= F.hess(self._slot(x, m))
        return out


def gauge_transform(L: Density, g: DivergenceSpec) -> Density:
    return GaugeDensity(L, g)


def divergence_density(g: DivergenceSpec, d: int) -> Density:
    """The pure discrete divergence ``div_t F + c`` (a null Lagrangian when c=0)."""
    return GaugeDensity(ConstantDensity(g.kind, d), DivergenceSpec(g.kind, g.F, g.c, 1.0))


def normalize_density(L: Density, base: StencilData, p_b, c_b: float) -> Density:
    """Gauge-equivalent density with value ``c_b`` and Mm- equal to ``p_b`` at ``base``.

    Adds ``F_1(a) - F_1(b) + c`` with ``F_1`` linear; no equation is solved.
    """
    if base.kind != L.kind:
        raise KindMismatchError(f"base stencil kind {base.kind} does not match density {L.kind}")
    p_b = np.broadcast_to(np.asarray(p_b, dtype=float), (L.d,))
    x0 = first_subtuple(base)
    c0 = float(L.eval(x0))
    p0 = mm_minus(L, base)
    shift = p0 - p_b
    u, u_plus = base.points[0], base.points[1]
    c = c_b - c0 + float(shift @ (u_plus - u))
    F = [ScalarFunction.linear(shift)] + [ScalarFunction.zero(L.d)] * (len(DIVERGENCE_PAIRS[L.kind]) - 1)
    return GaugeDensity(L, DivergenceSpec(L.kind, F, c=c, rho=1.0))


# --- temporal Lagrangian --------------------------------------------------

class TemporalLagrangian:
    """Spatial sum ``L_dx(U, V) = sum_j L(U_j, V_j, U_{j+1}[, V_{j+1}])``.

    ``U`` and ``V`` are consecutive time slices flattened to length ``nx*d``.
    Derivatives are taken with respect to the stacked vector ``[U, V]``.
    """

    def __init__(self, L: Density, nx: int, mesh: Mesh | None = None):
        self.L, self.nx, self.d, self.mesh = L, nx, L.d, mesh
        q, d = L.n_slots, L.d
        n = nx * d
        # slot k of the j-th term reads slice (k % 2) at space index j + k // 2
        idx = np.empty((nx, q, d), dtype=int)
        for j in range(nx):
            for k in range(q):
                jj = (j + k // 2) % nx
                idx[j, k] = (k % 2) * n + jj * d + np.arange(d)
        self._idx = idx.reshape(nx, q * d)
        self.size = n

    @property
    def kind(self):
        return self.L.kind

    def _points(self, U, V):
        U, V = np.asarray(U, float), np.asarray(V, float)
        if U.shape != (self.size,) or V.shape != (self.size,):
            raise ValueError(f"slices must have length nx*d = {self.size}")
        return np.concatenate([U, V])[self._idx]

    def eval(self, U, V) -> float:
        return float(np.sum(self.L.eval(self._points(U, V))))

    def grad(self, U, V) -> np.ndarray:
        g = self.L.grad(self._points(U, V))
        out = np.zeros(2 * self.size)
        np.add.at(out, self._idx, g)
        return out

    def hess(self, U, V) -> np.ndarray:
        h = self.L.hess(self._points(U, V))
        out = np.zeros((2 * self.size, 2 * self.size))
        np.add.at(out, (self._idx[:, :, None], self._idx[:, None, :]), h)
        return out

    def grad_first(self, U, V):
        return self.grad(U, V)[: self.size]

    def grad_second(self, U, V):
        return self.grad(U, V)[self.size:]

    def hess_blocks(self, U, V):
        """Blocks ``(H_UU, H_UV, H_VV)`` of the Hessian."""
        h = self.hess(U, V)
        n = self.size
        return h[:n, :n], h[:n, n:], h[n:, n:]


def temporal_lagrangian(L: Density, mesh: Mesh) -> TemporalLagrangian:
    if not mesh.periodic_x:
        raise ValueError("temporal Lagrangian requires a periodic mesh")
    if mesh.d != L.d:
        raise ValueError(f"mesh has d={mesh.d}, density has d={L.d}")
    return TemporalLagrangian(L, mesh.nx, mesh)


def temporal_del(TL: TemporalLagrangian, Uprev, Ucur, Unext) -> np.ndarray:
    for U in (Uprev, Ucur, Unext):
        if np.shape(U) != (TL.size,):
            raise ValueError(f"slice length {np.shape(U)} does not match nx*d = {TL.size}")
    return TL.grad_second(Uprev, Ucur) + TL.grad_first(Ucur, Unext)
