"""Gaussian-process conditioning of a discrete Lagrangian density.

The canonical process with squared-exponential covariance is conditioned on

* ``DEL(L)(u_k) = 0`` for every training stencil ``u_k``,
* ``Mm-(L)(u_b) = p_b`` and ``L(first sub-tuple of u_b) = c_b`` at a base stencil.

The posterior mean is ``L(x) = sum_n alpha_n (Phi_n K)(x)`` with
``(Theta + jitter I) alpha = y``; it is also the minimum-RKHS-norm density
satisfying the constraints (exactly so for zero jitter).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .density import Density, del_operator, first_subtuple, mm_minus
from .kernels import (EV_TAG, FunctionalBlock, FunctionalSpec, KernelExpansion, KernelParams,
                      as_block, concat_blocks, cross_gram, del_block, ev_base_block, mm_minus_block)
from .mesh import (DiscreteField, Mesh, StencilData, check_kind, field_stencil_array,
                   stencil_array, stencil_length)

log = logging.getLogger(__name__)

JITTER_START = 1e-15
JITTER_MAX = 1e-4


class ConditioningError(RuntimeError):
    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


def dedup_stencils(arr: np.ndarray) -> np.ndarray:
    """Drop bitwise-identical stencils, keeping first occurrences in order."""
    if arr.shape[0] == 0:
        return arr
    flat = np.ascontiguousarray(arr.reshape(arr.shape[0], -1))
    _, first = np.unique(flat.view(np.dtype((np.void, flat.dtype.itemsize * flat.shape[1]))).ravel(),
                         return_index=True)
    return arr[np.sort(first)]


def conditioning_block(stencils: np.ndarray, base: StencilData | None, kind: str) -> FunctionalBlock:
    """The functionals ``(DEL at each stencil, Mm- at base, ev at base)`` as one block."""
    blocks = [del_block(stencils, kind)]
    if base is not None:
        blocks += [mm_minus_block([base], kind), ev_base_block([base], kind)]
    return concat_blocks(blocks)


def assemble_theta(stencils, base: StencilData | None, kernel: KernelParams = KernelParams(),
                   kind: str | None = None) -> np.ndarray:
    """Gram matrix of all conditioning functionals, of size ``M*d + d + 1``."""
    kind = kind or (base.kind if base is not None else None)
    check_kind(kind)
    arr = stencil_array(stencils, kind)
    if arr.shape[0] == 0 and base is not None:
        arr = np.zeros((0,) + base.points.shape)
    block = conditioning_block(arr, base, kind)
    return _symmetric_gram(block, kernel)


def _symmetric_gram(block: FunctionalBlock, kernel: KernelParams) -> np.ndarray:
    theta = cross_gram(block, block, kernel)
    upper = np.triu(theta)
    return upper + np.triu(theta, 1).T


@dataclass(eq=False)
class TrainedModel:
    kind: str
    stencils: np.ndarray
    base: StencilData | None
    p_b: np.ndarray
    c_b: float
    kernel: KernelParams
    jitter: float
    alpha: np.ndarray
    residual: float = 0.0
    factor: tuple | None = field(default=None, repr=False)
    block: FunctionalBlock | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.block is None:
            self.block = conditioning_block(self.stencils, self.base, self.kind)

    @property
    def d(self) -> int:
        return self.stencils.shape[2]

    @property
    def M(self) -> int:
        return self.stencils.shape[0]

    @property
    def y(self) -> np.ndarray:
        tail = np.concatenate([self.p_b, [self.c_b]]) if self.base is not None else np.zeros(0)
        return np.concatenate([np.zeros(self.M * self.d), tail])

    def solve(self, rhs):
        """Apply ``(Theta + jitter I)^-1``."""
        if self.factor is None:
            self.factor = _factorize(_symmetric_gram(self.block, self.kernel), self.jitter)
        return linalg.cho_solve(self.factor, rhs)


def _factorize(theta, jitter):
    a = theta + jitter * np.eye(theta.shape[0])
    return linalg.cho_factor(a, lower=True, check_finite=False)


def fit(stencils, base: StencilData | None, p_b=1.0, c_b: float = 1.0,
        kernel: KernelParams = KernelParams(), jitter: float | None = None,
        kind: str | None = None, dedup: bool = True) -> TrainedModel:
    """Condition the Gaussian process on DEL constraints and the base normalisation.

    ``jitter=None`` starts at ``1e-15 * trace / dim``; a given value is used as
    the starting jitter. On Cholesky failure the jitter grows tenfold up to
    ``1e-4 * trace / dim``.
    """
    kind = kind or (base.kind if base is not None else None)
    check_kind(kind)
    arr = stencil_array(stencils, kind)
    if base is not None and base.kind != kind:
        raise ValueError(f"base stencil kind {base.kind} does not match {kind}")
    d = base.d if base is not None else arr.shape[2]
    if arr.shape[0] == 0:
        arr = np.zeros((0, arr.shape[1], d))
    if dedup:
        arr = dedup_stencils(arr)
    p_b = np.broadcast_to(np.asarray(p_b, dtype=float), (d,)).copy()
    block = conditioning_block(arr, base, kind)
    theta = _symmetric_gram(block, kernel)
    n = theta.shape[0]
    model = TrainedModel(kind, arr, base, p_b, float(c_b), kernel, 0.0, np.zeros(n), block=block)
    y = model.y
    if n == 0:
        return model
    scale = np.trace(theta) / n
    if jitter is None:
        lam = JITTER_START * scale
    elif jitter < 0:
        raise ValueError("jitter must be nonnegative")
    else:
        lam = float(jitter)
    lam_max = max(JITTER_MAX * scale, lam)
    while True:
        try:
            factor = _factorize(theta, lam)
            break
        except linalg.LinAlgError:
            if lam >= lam_max:
                ev = float(linalg.eigvalsh(theta, subset_by_index=[0, 0])[0])
                raise ConditioningError(
                    f"Theta + jitter*I is not positive definite up to jitter {lam:.3e} "
                    f"(smallest eigenvalue of Theta ~ {ev:.3e})", ev)
            lam = lam * 10 if lam > 0 else JITTER_START * scale
    alpha = linalg.cho_solve(factor, y)
    A = theta + lam * np.eye(n)
    residual = float(np.max(np.abs(A @ alpha - y)))
    # one step of iterative refinement
    if residual > 0:
        alpha = alpha + linalg.cho_solve(factor, y - A @ alpha)
        residual = float(np.max(np.abs(A @ alpha - y)))
    log.info("fit: n=%d jitter=%.3e residual=%.3e", n, lam, residual)
    model.jitter, model.alpha, model.residual, model.factor = lam, alpha, residual, factor
    return model


class PosteriorDensity(Density):
    """Posterior mean density of a :class:`TrainedModel`."""

    def __init__(self, model: TrainedModel):
        self.model = model
        self.kind, self.d = model.kind, model.d
        self._expansion = KernelExpansion(model.block, model.alpha, model.kernel)

    def eval(self, x):
        return self._expansion.eval(x)

    def grad(self, x):
        return self._expansion.grad(x)

    def hess(self, x):
        return self._expansion.hess(x)


def posterior_density(model: TrainedModel) -> PosteriorDensity:
    return PosteriorDensity(model)


def posterior_cov(model: TrainedModel, f, g=None):
    """Posterior covariance between functionals ``f`` and ``g`` (default ``g = f``).

    Returns a float when both are single evaluation functionals, otherwise the
    full matrix block.
    """
    g = f if g is None else g
    fb, gb = as_block(f), as_block(g)
    prior = cross_gram(fb, gb, model.kernel)
    if model.block.n_rows == 0:
        cov = prior
    else:
        Kf = cross_gram(model.block, fb, model.kernel)
        Kg = Kf if g is f else cross_gram(model.block, gb, model.kernel)
        cov = prior - Kf.T @ model.solve(Kg)
    if (isinstance(f, FunctionalSpec) and isinstance(g, FunctionalSpec)
            and f.tag == EV_TAG and g.tag == EV_TAG):
        return float(cov[0, 0])
    return cov


@dataclass(frozen=True, eq=False)
class UncertaintyField:
    """Standard deviations of DEL of the posterior process at interior points, ``(nt-2, nx, d)``."""

    mesh: Mesh
    sigma: np.ndarray

    def rows(self):
        nt2, nx, d = self.sigma.shape
        for i in range(nt2):
            for j in range(nx):
                for r in range(d):
                    yield i + 1, j, r, float(self.sigma[i, j, r])


def del_variances(model: TrainedModel, stencils, chunk: int = 256) -> np.ndarray:
    """Posterior variances of each DEL component at the given stencils, ``(M, d)``, unclamped."""
    arr = stencil_array(stencils, model.kind)
    M, _, d = arr.shape
    out = np.empty((M, d))
    for c0 in range(0, M, chunk):
        blk = del_block(arr[c0:c0 + chunk], model.kind)
        prior = np.diag(cross_gram(blk, blk, model.kernel))
        if model.block.n_rows:
            K = cross_gram(model.block, blk, model.kernel)
            prior = prior - np.einsum("ij,ij->j", K, model.solve(K))
        out[c0:c0 + chunk] = prior.reshape(-1, d)
    return out


def sigma_del_map(model: TrainedModel, field: DiscreteField) -> UncertaintyField:
    arr = field_stencil_array(field, model.kind)
    var = del_variances(model, arr)
    sigma = np.sqrt(np.maximum(var, 0.0))
    nt, nx, d = field.values.shape
    return UncertaintyField(field.mesh, sigma.reshape(nt - 2, nx, d))


def rkhs_norm(model: TrainedModel) -> float:
    """RKHS norm of the posterior mean, ``sqrt(y . alpha)``."""
    val = float(model.y @ model.alpha)
    if val < -1e-12:
        raise ConditioningError(f"negative squared RKHS norm {val:.3e}")
    return float(np.sqrt(max(val, 0.0)))


def training_residuals(model: TrainedModel) -> dict:
    """Constraint residuals of the posterior mean: max |DEL|, |Mm- - p_b|, |ev - c_b|."""
    L = posterior_density(model)
    out = {"del": float(np.max(np.abs(del_operator(L, model.stencils)))) if model.M else 0.0}
    if model.base is not None:
        out["mm_minus"] = float(np.max(np.abs(mm_minus(L, model.base) - model.p_b)))
        out["ev"] = float(abs(L.eval(first_subtuple(model.base)) - model.c_b))
    return out


# --- serialisation --------------------------------------------------------

def model_to_dict(model: TrainedModel) -> dict:
    return {
        "kind": model.kind,
        "kernel": {"lengthscale": model.kernel.lengthscale, "variance": model.kernel.variance},
        "jitter": model.jitter,
        "base": None if model.base is None else model.base.points.tolist(),
        "p_b": model.p_b.tolist(),
        "c_b": model.c_b,
        "d": model.d,
        "stencils": model.stencils.tolist(),
        "alpha": model.alpha.tolist(),
        "residual": model.residual,
    }


def model_from_dict(obj: dict) -> TrainedModel:
    for key in ("kind", "kernel", "jitter", "base", "p_b", "c_b", "stencils", "alpha"):
        if key not in obj:
            raise ValueError(f"model file is missing key {key!r}")
    kind = obj["kind"]
    d = int(obj.get("d", len(obj["p_b"])))
    base = None if obj["base"] is None else StencilData(kind, np.array(obj["base"], float))
    stencils = np.array(obj["stencils"], float)
    if stencils.size == 0:
        stencils = np.zeros((0, stencil_length(kind), d))
    return TrainedModel(
        kind=kind, stencils=stencils, base=base, p_b=np.array(obj["p_b"], float),
        c_b=float(obj["c_b"]), kernel=KernelParams(**obj["kernel"]), jitter=float(obj["jitter"]),
        alpha=np.array(obj["alpha"], float), residual=float(obj.get("residual", 0.0)))


def save_model(model: TrainedModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n")


def load_model(path) -> TrainedModel:
    return model_from_dict(json.loads(Path(path).read_text()))
