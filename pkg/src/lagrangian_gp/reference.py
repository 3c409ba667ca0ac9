"""Closed-form field theories used to generate training and test data."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .density import Density, _flat
from .mesh import FOUR_POINT, THREE_POINT, DiscreteField, Mesh


def _quadratic(u):
    return 0.5 * np.asarray(u) ** 2


def _identity(u):
    return np.asarray(u, dtype=float)


def _ones(u):
    return np.ones_like(np.asarray(u, dtype=float))


def _zeros(u):
    return np.zeros_like(np.asarray(u, dtype=float))


@dataclass(frozen=True)
class WaveSpec:
    """Discrete wave equation with potential ``V`` (default ``u^2/2``)."""

    dt: float = 1 / 40
    dx: float = 1 / 20
    V: Callable = _quadratic
    dV: Callable = _identity
    d2V: Callable = _ones

    def __post_init__(self):
        if self.dt <= 0 or self.dx <= 0:
            raise ValueError("dt and dx must be positive")


@dataclass(frozen=True)
class SchrodingerSpec:
    """Discrete nonlinear Schroedinger equation, potential acting on ``|u|^2``."""

    dt: float = 7 / 400
    dx: float = 1 / 10
    V: Callable = _identity
    dV: Callable = _ones
    d2V: Callable = _zeros

    def __post_init__(self):
        if self.dt <= 0 or self.dx <= 0:
            raise ValueError("dt and dx must be positive")


class WaveDensity(Density):
    """``L(u, u^+, u_+) = ((u^+ - u)/dt)^2/2 - ((u_+ - u)/dx)^2/2 - V(u)`` for scalar fields."""

    kind = THREE_POINT
    d = 1

    def __init__(self, spec: WaveSpec):
        self.spec = spec

    def eval(self, x):
        x = _flat(x, 3)
        u, up, ur = x[..., 0], x[..., 1], x[..., 2]
        s = self.spec
        return 0.5 * ((up - u) / s.dt) ** 2 - 0.5 * ((ur - u) / s.dx) ** 2 - s.V(u)

    def grad(self, x):
        x = _flat(x, 3)
        u, up, ur = x[..., 0], x[..., 1], x[..., 2]
        s = self.spec
        gt = (up - u) / s.dt**2
        gx = (ur - u) / s.dx**2
        return np.stack([-gt + gx - s.dV(u), gt, -gx], axis=-1)

    def hess(self, x):
        x = _flat(x, 3)
        s = self.spec
        a, b = 1 / s.dt**2, 1 / s.dx**2
        h = np.broadcast_to(np.array([[a - b, -a, b], [-a, a, 0.0], [b, 0.0, -b]]),
                            x.shape[:-1] + (3, 3)).copy()
        h[..., 0, 0] -= s.d2V(x[..., 0])
        return h


J = np.array([[0.0, -1.0], [1.0, 0.0]])


class SchrodingerDensity(Density):
    """``L = u_c^T J u_dt - |u_dx|^2 - V(|u_c|^2)`` on four-point tuples in ``R^2``.

    ``u_c`` is the average of the four values, ``u_dt`` and ``u_dx`` the averaged
    forward differences in time and space.
    """

    kind = FOUR_POINT
    d = 2

    def __init__(self, spec: SchrodingerSpec):
        self.spec = spec
        I = np.eye(2)
        self.C = 0.25 * np.hstack([I, I, I, I])
        self.T = np.hstack([-I, I, -I, I]) / (2 * spec.dt)
        self.X = np.hstack([-I, -I, I, I]) / (2 * spec.dx)
        self._kin = self.C.T @ J @ self.T
        self._kin = self._kin + self._kin.T
        self._grad2 = 2 * self.X.T @ self.X
        self._CC = self.C.T @ self.C

    def eval(self, x):
        x = _flat(x, 8)
        uc, ut, ux = x @ self.C.T, x @ self.T.T, x @ self.X.T
        kinetic = np.einsum("...i,ij,...j->...", uc, J, ut)
        return kinetic - np.sum(ux**2, axis=-1) - self.spec.V(np.sum(uc**2, axis=-1))

    def grad(self, x):
        x = _flat(x, 8)
        rho = np.sum((x @ self.C.T) ** 2, axis=-1)
        return x @ self._kin.T - x @ self._grad2.T - 2 * self.spec.dV(rho)[..., None] * (x @ self._CC.T)

    def hess(self, x):
        x = _flat(x, 8)
        rho = np.sum((x @ self.C.T) ** 2, axis=-1)
        w = x @ self._CC.T
        base = self._kin - self._grad2
        return (base - 2 * self.spec.dV(rho)[..., None, None] * self._CC
                - 4 * self.spec.d2V(rho)[..., None, None] * w[..., :, None] * w[..., None, :])


def wave_density(spec: WaveSpec | None = None) -> WaveDensity:
    return WaveDensity(spec or WaveSpec())


def schrodinger_density(spec: SchrodingerSpec | None = None) -> SchrodingerDensity:
    return SchrodingerDensity(spec or SchrodingerSpec())


# --- travelling waves -----------------------------------------------------

class NoRealSpeedError(ValueError):
    pass


def dispersion_rhs(k: int, spec: WaveSpec) -> float:
    """Right-hand side ``r`` of ``cos(kappa c dt) = r`` for mode ``k``, ``kappa = 2 pi k``."""
    kappa = 2 * np.pi * k
    return 1 - spec.dt**2 / 2 + (spec.dt**2 / spec.dx**2) * (np.cos(kappa * spec.dx) - 1)


def wave_speed(k: int, spec: WaveSpec) -> float:
    """Smallest nonnegative speed of the travelling wave with mode ``k``."""
    r = dispersion_rhs(k, spec)
    if abs(r) > 1:
        raise NoRealSpeedError(f"no real wave speed for k={k}: dispersion right-hand side {r} outside [-1, 1]")
    if k == 0:
        return 0.0
    return float(np.arccos(r) / (2 * np.pi * abs(k) * spec.dt))


def travelling_wave(k: int, a1: float, a2: float, spec: WaveSpec, mesh: Mesh) -> DiscreteField:
    """``a1 sin(kappa (x - c t)) + a2 cos(kappa (x - c t))`` sampled on ``mesh``.

    Solves the interpolated discrete wave equation for the quadratic potential
    ``V(u) = u^2/2``.
    """
    wave_speed(k, spec)  # raises when no real speed exists
    # phases kappa x_j - kappa c t_i in extended precision, so values are rounded once
    ld = np.longdouble
    dt, dx = ld(spec.dt), ld(spec.dx)
    r = 1 - dt**2 / 2 + (dt**2 / dx**2) * (np.cos(2 * np.pi * ld(k) * dx) - 1)
    step = np.sign(k) * np.arccos(np.clip(r, -1, 1))  # kappa * c * dt
    x = np.arange(mesh.nx, dtype=ld) * ld(mesh.dx)
    phase = 2 * ld(np.pi) * k * x[None, :] - step * np.arange(mesh.nt, dtype=ld)[:, None]
    u = ld(a1) * np.sin(phase) + ld(a2) * np.cos(phase)
    return DiscreteField(mesh, u.astype(float)[..., None])


# --- initial data ---------------------------------------------------------

@dataclass(frozen=True)
class SamplerSpec:
    """Random truncated Fourier series for initial slices.

    Mode ``m`` has coefficients uniform in ``(-1, 1)`` scaled by
    ``amplitude * amplitude_decay**-(m-1)``, so an infinite decay leaves a
    single mode-1 sinusoid. Momenta (if requested) are drawn the same way and
    multiplied by ``momentum_scale``.
    """

    mode: str = "fourier"
    max_mode: int = 3
    amplitude_decay: float = 2.0
    seed: int = 0
    momentum_scale: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.mode != "fourier":
            raise ValueError(f"unsupported sampler mode {self.mode!r}")
        if self.max_mode < 1:
            raise ValueError("max_mode must be >= 1")
        if not self.amplitude_decay > 0:
            raise ValueError("amplitude_decay must be positive")
        if not self.amplitude >= 0:
            raise ValueError("amplitude must be nonnegative")


def fourier_series(spec: SamplerSpec, mesh: Mesh, rng: np.random.Generator) -> np.ndarray:
    """One random slice of shape ``(nx, d)``; periodic over ``nx * dx``."""
    x = np.arange(mesh.nx) * mesh.dx
    period = mesh.nx * mesh.dx
    m = np.arange(1, spec.max_mode + 1)
    amp = spec.amplitude * np.power(float(spec.amplitude_decay), -(m - 1.0))
    alpha = rng.uniform(-1, 1, size=(mesh.d, m.size)) * amp
    beta = rng.uniform(-1, 1, size=(mesh.d, m.size)) * amp
    phase = 2 * np.pi * np.outer(x, m) / period
    return np.cos(phase) @ alpha.T + np.sin(phase) @ beta.T


def sample_initial(spec: SamplerSpec, mesh: Mesh, rng: np.random.Generator | None = None,
                   momentum: bool = True):
    """Random initial slice ``U0`` and (optionally) momentum ``P0``, both flat of length ``nx*d``."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    U0 = fourier_series(spec, mesh, rng).reshape(-1)
    if not momentum:
        return U0, None
    P0 = spec.momentum_scale * fourier_series(spec, mesh, rng).reshape(-1)
    return U0, P0


def schrodinger_second_slice(U0, spec: SchrodingerSpec, mesh: Mesh) -> np.ndarray:
    """``U1`` from one implicit-midpoint step of ``J u_t = (-u_xx + V'(|u|^2)) u``.

    The second derivative is the periodic three-point difference quotient.
    """
    nx = mesh.nx
    U0 = np.asarray(U0, float).reshape(nx, 2)

    def rhs(u):
        lap = (np.roll(u, -1, axis=0) - 2 * u + np.roll(u, 1, axis=0)) / mesh.dx**2
        return -lap + spec.dV(np.sum(u**2, axis=1))[:, None] * u

    def residual(flat):
        u1 = flat.reshape(nx, 2)
        return ((u1 - U0) @ J.T / mesh.dt - rhs(0.5 * (U0 + u1))).ravel()

    sol = optimize.root(residual, U0.ravel(), method="hybr", tol=1e-14)
    if not sol.success and np.max(np.abs(residual(sol.x))) > 1e-8:
        raise RuntimeError(f"implicit midpoint step failed: {sol.message}")
    return sol.x
