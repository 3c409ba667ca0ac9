"""Variational time stepping: solve temporal discrete Euler-Lagrange equations."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .density import TemporalLagrangian, temporal_del
from .mesh import DiscreteField, Mesh

log = logging.getLogger(__name__)


class NewtonDivergenceError(RuntimeError):
    def __init__(self, message, residual=np.inf, level=None):
        super().__init__(message)
        self.residual = residual
        self.level = level


class DegenerateDensityError(NewtonDivergenceError):
    """The Newton Jacobian is singular: the density does not determine the next slice."""


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-10
    max_iter: int = 50
    line_search: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")


@dataclass
class NewtonResult:
    x: np.ndarray
    residual: float
    iterations: int


def newton_solve(residual, jacobian, x0, cfg: NewtonConfig) -> NewtonResult:
    """Newton's method with optional backtracking on ``|F|^2 / 2``.

    Raises if a step cannot decrease ``|F|``; for learned densities this happens
    when ``tol`` is below the rounding floor of the posterior mean.
    """
    x = np.array(x0, dtype=float)
    F = residual(x)
    err = np.max(np.abs(F))
    it = 0
    while err > cfg.tol:
        if it >= cfg.max_iter:
            raise NewtonDivergenceError(
                f"Newton did not converge in {cfg.max_iter} iterations (residual {err:.3e})", err)
        Jm = jacobian(x)
        try:
            delta = np.linalg.solve(Jm, -F)
        except np.linalg.LinAlgError as exc:
            raise DegenerateDensityError(f"singular Newton Jacobian: {exc}", err) from exc
        if not np.all(np.isfinite(delta)):
            raise DegenerateDensityError("Newton step is not finite", err)
        t, phi = 1.0, 0.5 * F @ F
        while True:
            x_new = x + t * delta
            F_new = residual(x_new)
            phi_new = 0.5 * F_new @ F_new
            if not cfg.line_search or phi_new <= (1 - 1e-4 * t) * phi or t < 1e-6:
                break
            t *= 0.5
        it += 1
        if cfg.line_search and phi_new > phi:
            # no decrease along the Newton direction: residual is at its floor
            raise NewtonDivergenceError(
                f"Newton stalled at residual {err:.3e} after {it} iterations", err)
        x, F = x_new, F_new
        err = np.max(np.abs(F))
    return NewtonResult(x, float(err), it)


def first_step(TL: TemporalLagrangian, U0, P0, cfg: NewtonConfig = NewtonConfig(),
               guess=None) -> np.ndarray:
    """Solve ``P0 = -grad_U L_dx(U0, U1)`` for ``U1``."""
    return first_step_result(TL, U0, P0, cfg, guess).x


def first_step_result(TL, U0, P0, cfg=NewtonConfig(), guess=None) -> NewtonResult:
    U0, P0 = np.asarray(U0, float), np.asarray(P0, float)
    if U0.shape != (TL.size,) or P0.shape != (TL.size,):
        raise ValueError(f"slices must have length {TL.size}")
    return newton_solve(
        lambda U1: P0 + TL.grad_first(U0, U1),
        lambda U1: TL.hess_blocks(U0, U1)[1],
        U0 if guess is None else guess, cfg)


def step_result(TL: TemporalLagrangian, Uprev, Ucur, cfg: NewtonConfig = NewtonConfig(),
                guess=None) -> NewtonResult:
    Uprev, Ucur = np.asarray(Uprev, float), np.asarray(Ucur, float)
    if Uprev.shape != (TL.size,) or Ucur.shape != (TL.size,):
        raise ValueError(f"slices must have length {TL.size}")
    fixed = TL.grad_second(Uprev, Ucur)
    return newton_solve(
        lambda Un: fixed + TL.grad_first(Ucur, Un),
        lambda Un: TL.hess_blocks(Ucur, Un)[1],
        2 * Ucur - Uprev if guess is None else guess, cfg)


def step(TL: TemporalLagrangian, Uprev, Ucur, cfg: NewtonConfig = NewtonConfig()) -> np.ndarray:
    """Next slice from the temporal DEL equation, Newton-started at ``2*Ucur - Uprev``."""
    return step_result(TL, Uprev, Ucur, cfg).x


def continuation_step(TL: TemporalLagrangian, U0, U1, U2, cfg: NewtonConfig = NewtonConfig(),
                      min_dtau: float = 1 / 1024) -> NewtonResult:
    """Next slice after ``(U1, U2)`` by continuation from the solved triple ``(U0, U1, U2)``.

    The known slices move linearly from ``(U0, U1)`` to ``(U1, U2)``; at ``tau = 0``
    the solution is ``U2`` itself. Each substep is a Newton solve started from the
    previous one, and substeps halve on failure.
    """
    U0, U1, U2 = (np.asarray(u, float) for u in (U0, U1, U2))
    tau, dtau, x, iters = 0.0, 0.25, U2.copy(), 0
    while tau < 1:
        t = min(1.0, tau + dtau)
        A, B = (1 - t) * U0 + t * U1, (1 - t) * U1 + t * U2
        try:
            res = step_result(TL, A, B, cfg, guess=x)
        except NewtonDivergenceError:
            dtau /= 2
            if dtau < min_dtau:
                raise
            continue
        tau, x, iters = t, res.x, iters + res.iterations
        dtau = min(2 * dtau, 0.25)
    return NewtonResult(x, res.residual, iters)


def propagate(TL: TemporalLagrangian, U0, U1, n_steps: int, cfg: NewtonConfig = NewtonConfig(),
              mesh: Mesh | None = None) -> DiscreteField:
    """Field with ``n_steps + 2`` levels starting from slices ``U0, U1``.

    Each step is Newton-started at ``2*Ucur - Uprev``; from the third step on, a
    failed start falls back to :func:`continuation_step`.

    ``meta`` records per-level Newton iterations and final temporal DEL residuals.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    slices = [np.asarray(U0, float), np.asarray(U1, float)]
    iterations, residuals = [], []
    for n in range(n_steps):
        try:
            res = step_result(TL, slices[-2], slices[-1], cfg)
        except NewtonDivergenceError as exc:
            if len(slices) < 3:
                exc.level = n + 2
                raise
            log.debug("level %d: extrapolated start failed (%s), continuing from level %d", n + 2, exc, n + 1)
            try:
                res = continuation_step(TL, *slices[-3:], cfg)
            except NewtonDivergenceError as exc2:
                exc2.level = n + 2
                raise exc2 from exc
        slices.append(res.x)
        iterations.append(res.iterations)
        residuals.append(float(np.max(np.abs(temporal_del(TL, slices[-3], slices[-2], slices[-1])))))
        log.debug("level %d: %d Newton iterations, residual %.3e", n + 2, res.iterations, residuals[-1])
    mesh = mesh or TL.mesh
    if mesh is None:
        raise ValueError("propagate needs the mesh (dt, dx) of the output field")
    out_mesh = Mesh(mesh.dt, mesh.dx, n_steps + 2, TL.nx, TL.d)
    values = np.stack(slices).reshape(n_steps + 2, TL.nx, TL.d)
    return DiscreteField(out_mesh, values, meta={"newton_iterations": iterations, "residuals": residuals})
