"""Squared-exponential kernel, its derivatives, and linear functionals applied to it.

Every functional used for conditioning (DEL at a stencil, Mm- at the base
stencil, evaluation at a point) is a finite sum of *atoms*: a weight times
either the value or one partial derivative of a function at a point. A
:class:`FunctionalBlock` stores a batch of such functionals as atoms, and
:func:`cross_gram` applies two blocks to the two kernel arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .density import DEL_TERMS, EV_TUPLE, MM_MINUS_TERMS
from .mesh import StencilData, check_kind, n_slots, stencil_array

EV = -1  # atom coordinate marking a plain evaluation


class UnsupportedOrderError(ValueError):
    pass


@dataclass(frozen=True)
class KernelParams:
    lengthscale: float = 1.0
    variance: float = 1.0

    def __post_init__(self):
        if not (self.lengthscale > 0 and self.variance > 0):
            raise ValueError("kernel lengthscale and variance must be positive")

    @property
    def s(self) -> float:
        return self.lengthscale**2


def k_eval(x, y, p: KernelParams = KernelParams()):
    """``variance * exp(-|x - y|^2 / (2 lengthscale^2))``, broadcasting over leading axes."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.shape[-1] != y.shape[-1]:
        raise ValueError(f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}")
    r = x - y
    return p.variance * np.exp(-np.sum(r * r, axis=-1) / (2 * p.s))


def k_derivative(x, y, p: KernelParams = KernelParams(), dx=(), dy=()):
    """Partial derivative of :func:`k_eval`.

    ``dx`` and ``dy`` list coordinate indices (repeats allowed) to differentiate
    in the first and second argument. Total order at most three.
    """
    idx = tuple(dx) + tuple(dy)
    if len(idx) > 3:
        raise UnsupportedOrderError(f"derivative order {len(idx)} > 3 is not supported")
    x, y = np.asarray(x, float), np.asarray(y, float)
    r = x - y
    s = p.s
    k = k_eval(x, y, p)
    # derivatives of g(r) = k(r); d/dy = -d/dr
    sign = (-1.0) ** len(tuple(dy))
    if len(idx) == 0:
        val = 1.0
    elif len(idx) == 1:
        (i,) = idx
        val = -r[..., i] / s
    elif len(idx) == 2:
        i, j = idx
        val = r[..., i] * r[..., j] / s**2 - (i == j) / s
    else:
        i, j, l = idx
        val = (-r[..., i] * r[..., j] * r[..., l] / s**3
               + ((i == j) * r[..., l] + (i == l) * r[..., j] + (j == l) * r[..., i]) / s**2)
    return sign * val * k


# --- functionals ----------------------------------------------------------

DEL, MM_MINUS, EV_TAG = "del_at_stencil", "mm_minus_at_stencil", "ev_at_point"
TAGS = (DEL, MM_MINUS, EV_TAG)


@dataclass(frozen=True, eq=False)
class FunctionalSpec:
    """A linear functional on densities.

    ``payload`` is a :class:`StencilData` for DEL / Mm- and a flattened density
    input point for evaluation. ``kind`` is required for evaluation functionals
    only when it cannot be inferred.
    """

    tag: str
    payload: object
    kind: str | None = None

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"unknown functional tag {self.tag!r}")
        if self.tag in (DEL, MM_MINUS) and not isinstance(self.payload, StencilData):
            raise ValueError(f"{self.tag} needs a StencilData payload")
        if self.kind is not None:
            check_kind(self.kind)
            if isinstance(self.payload, StencilData) and self.payload.kind != self.kind:
                raise ValueError("payload kind does not match functional kind")


@dataclass(frozen=True, eq=False)
class FunctionalBlock:
    """A stack of ``n_rows`` scalar functionals stored as atoms.

    Atom ``a`` contributes ``weight[a] * D_coord[a] f(points[point[a]])`` to row
    ``row[a]``; ``coord == EV`` means no derivative.
    """

    points: np.ndarray
    point: np.ndarray
    coord: np.ndarray
    weight: np.ndarray
    row: np.ndarray
    n_rows: int

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.point.size

    def matrix(self):
        """Sparse ``(n_atoms, n_rows)`` matrix of atom weights."""
        return sparse.csr_matrix((self.weight, (np.arange(self.n_atoms), self.row)),
                                 shape=(self.n_atoms, self.n_rows))

    @staticmethod
    def empty(dim: int) -> "FunctionalBlock":
        z = np.zeros(0, dtype=int)
        return FunctionalBlock(np.zeros((0, dim)), z, z, np.zeros(0), z, 0)


def concat_blocks(blocks) -> FunctionalBlock:
    blocks = list(blocks)
    dim = blocks[0].dim
    pts, point, coord, weight, row = [], [], [], [], []
    p_off = r_off = 0
    for b in blocks:
        if b.dim != dim:
            raise ValueError("functional blocks act on inputs of different dimension")
        pts.append(b.points)
        point.append(b.point + p_off)
        coord.append(b.coord)
        weight.append(b.weight)
        row.append(b.row + r_off)
        p_off += b.points.shape[0]
        r_off += b.n_rows
    return FunctionalBlock(np.concatenate(pts), np.concatenate(point), np.concatenate(coord),
                           np.concatenate(weight), np.concatenate(row), r_off)


def operator_block(stencils: np.ndarray, kind: str, terms) -> FunctionalBlock:
    """Functionals ``sum_terms sign * grad_slot L(sub-tuple)`` at each stencil, one row per component."""
    M, _, d = stencils.shape
    q = n_slots(kind)
    nt = len(terms)
    # points: (M, nt, q*d)
    points = np.stack([stencils[:, list(sub), :].reshape(M, q * d) for _, _, sub in terms], axis=1)
    m, t, r = np.meshgrid(np.arange(M), np.arange(nt), np.arange(d), indexing="ij")
    slots = np.array([slot for _, slot, _ in terms])
    signs = np.array([sign for sign, _, _ in terms])
    return FunctionalBlock(
        points=points.reshape(M * nt, q * d),
        point=(m * nt + t).ravel(),
        coord=(slots[t] * d + r).ravel(),
        weight=signs[t].ravel().astype(float),
        row=(m * d + r).ravel(),
        n_rows=M * d,
    )


def del_block(stencils, kind: str) -> FunctionalBlock:
    return operator_block(stencil_array(stencils, kind), kind, DEL_TERMS[kind])


def mm_minus_block(stencils, kind: str) -> FunctionalBlock:
    return operator_block(stencil_array(stencils, kind), kind, MM_MINUS_TERMS[kind])


def ev_block(points) -> FunctionalBlock:
    points = np.atleast_2d(np.asarray(points, float))
    n = points.shape[0]
    return FunctionalBlock(points, np.arange(n), np.full(n, EV), np.ones(n), np.arange(n), n)


def ev_base_block(stencils, kind: str) -> FunctionalBlock:
    arr = stencil_array(stencils, kind)
    return ev_block(arr[:, list(EV_TUPLE[kind]), :].reshape(arr.shape[0], -1))


def functional_block(f: FunctionalSpec) -> FunctionalBlock:
    if f.tag == DEL:
        return del_block([f.payload], f.payload.kind)
    if f.tag == MM_MINUS:
        return mm_minus_block([f.payload], f.payload.kind)
    return ev_block(np.asarray(f.payload, float).reshape(1, -1))


def as_block(f) -> FunctionalBlock:
    if isinstance(f, FunctionalBlock):
        return f
    if isinstance(f, FunctionalSpec):
        return functional_block(f)
    return concat_blocks([as_block(g) for g in f])


# --- Gram matrices --------------------------------------------------------

def _atom_pair_values(r, k, ca, cb, s):
    """``D^a_x D^b_y K`` for all atom pairs given differences ``r = x_a - y_b``."""
    der_a = ca >= 0
    der_b = cb >= 0
    nA, nB = ca.size, cb.size
    ia = np.arange(nA)[:, None]
    jb = np.arange(nB)[None, :]
    ra = r[ia, jb, np.where(der_a, ca, 0)[:, None]]
    rb = r[ia, jb, np.where(der_b, cb, 0)[None, :]]
    both = der_a[:, None] & der_b[None, :]
    out = np.where(both, (ca[:, None] == cb[None, :]) / s - ra * rb / s**2,
                   np.where(der_a[:, None], -ra / s, np.where(der_b[None, :], rb / s, 1.0)))
    return out * k


def cross_gram(A, B, p: KernelParams = KernelParams(), chunk_bytes: float = 64e6) -> np.ndarray:
    """Matrix ``(f_i^1 g_j^2 K)`` for the functionals of blocks ``A`` (rows) and ``B`` (columns)."""
    A, B = as_block(A), as_block(B)
    out = np.zeros((A.n_rows, B.n_rows))
    if A.n_atoms == 0 or B.n_atoms == 0:
        return out
    if A.dim != B.dim:
        raise ValueError(f"functionals act on inputs of dimension {A.dim} and {B.dim}")
    SB = B.matrix()
    # process A atoms grouped by point so that differences are computed per point pair
    order = np.argsort(A.point, kind="stable")
    a_point = A.point[order]
    bpts = B.points[B.point]  # per-atom B points
    n_b = B.n_atoms
    per_point = max(1, int(chunk_bytes // (8 * n_b * (A.dim + 4))))
    uniq, starts = np.unique(a_point, return_index=True)
    ends = np.append(starts[1:], a_point.size)
    for c0 in range(0, uniq.size, per_point):
        sel = order[starts[c0]:ends[min(c0 + per_point, uniq.size) - 1]]
        pts = A.points[uniq[c0:c0 + per_point]]
        local = np.searchsorted(uniq[c0:c0 + per_point], A.point[sel])
        r_pts = pts[:, None, :] - bpts[None, :, :]
        k_pts = p.variance * np.exp(-np.einsum("ijk,ijk->ij", r_pts, r_pts) / (2 * p.s))
        r = r_pts[local]
        k = k_pts[local]
        D = _atom_pair_values(r, k, A.coord[sel], B.coord, p.s)
        D *= A.weight[sel][:, None]
        contrib = (SB.T @ D.T).T  # (len(sel), B.n_rows)
        np.add.at(out, A.row[sel], contrib)
    return out


def apply_functional(side: str, f: FunctionalSpec, other, p: KernelParams = KernelParams()):
    """Apply ``f`` to the kernel as a function of one argument, the other held at ``other``.

    Returns a scalar for evaluation functionals and a length-``d`` vector otherwise.
    """
    fb = functional_block(f)
    ob = ev_block(np.asarray(other, float).reshape(1, -1))
    if fb.dim != ob.dim:
        raise ValueError(f"functional acts on dimension {fb.dim}, point has dimension {ob.dim}")
    if side == "first":
        val = cross_gram(fb, ob, p)[:, 0]
    elif side == "second":
        val = cross_gram(ob, fb, p)[0, :]
    else:
        raise ValueError("side must be 'first' or 'second'")
    return float(val[0]) if f.tag == EV_TAG else val


# --- kernel expansions ----------------------------------------------------

class KernelExpansion:
    """Function ``x -> sum_n c_n (f_n^2 K)(x, .)`` for a block of functionals ``f_n``.

    Atoms sharing a point are merged into a value weight ``e_p`` and a
    derivative weight vector ``g_p``, so that
    ``h(x) = sum_p k(x, z_p) (e_p + g_p . (x - z_p) / s)``.
    """

    def __init__(self, block: FunctionalBlock, coef, p: KernelParams = KernelParams()):
        coef = np.asarray(coef, float)
        beta = block.weight * coef[block.row]
        npts, dim = block.points.shape
        E = np.zeros(npts)
        G = np.zeros((npts, dim))
        ev = block.coord == EV
        np.add.at(E, block.point[ev], beta[ev])
        np.add.at(G, (block.point[~ev], block.coord[~ev]), beta[~ev])
        keep = (E != 0) | np.any(G != 0, axis=1)
        self.Z, self.E, self.G = block.points[keep], E[keep], G[keep]
        self.p = p
        self.dim = dim

    def _prep(self, x):
        x = np.asarray(x, float)
        lead = x.shape[:-1]
        x = x.reshape(-1, self.dim)
        r = x[:, None, :] - self.Z[None, :, :]
        k = self.p.variance * np.exp(-np.einsum("nij,nij->ni", r, r) / (2 * self.p.s))
        gr = np.einsum("nij,ij->ni", r, self.G)
        return lead, r, k, gr

    def eval(self, x):
        lead, r, k, gr = self._prep(x)
        return (k * (self.E + gr / self.p.s)).sum(axis=1).reshape(lead)

    def grad(self, x):
        lead, r, k, gr = self._prep(x)
        s = self.p.s
        out = (k @ self.G) / s - np.einsum("ni,nij->nj", k * (self.E / s + gr / s**2), r)
        return out.reshape(lead + (self.dim,))

    def hess(self, x):
        lead, r, k, gr = self._prep(x)
        s = self.p.s
        w_rr = k * (self.E / s**2 + gr / s**3)
        w_i = k * (self.E / s + gr / s**2)
        H = np.einsum("ni,nij,nik->njk", w_rr, r, r)
        kg = np.einsum("ni,nij,ik->njk", k, r, self.G) / s**2
        H -= kg + np.swapaxes(kg, 1, 2)
        H -= w_i.sum(axis=1)[:, None, None] * np.eye(self.dim)
        return H.reshape(lead + (self.dim, self.dim))
