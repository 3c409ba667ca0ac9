"""Data generation for the wave and Schroedinger experiments."""

from __future__ import annotations

import numpy as np

from .density import Density, temporal_lagrangian
from .integrator import NewtonConfig, first_step, propagate
from .mesh import DiscreteField, Mesh
from .reference import (SamplerSpec, SchrodingerSpec, WaveSpec, fourier_series, sample_initial,
                        schrodinger_density, schrodinger_second_slice, travelling_wave, wave_density)

WAVE_MESH = Mesh(dt=1 / 40, dx=1 / 20, nt=21, nx=20, d=1)
SCHRODINGER_MESH = Mesh(dt=7 / 400, dx=1 / 10, nt=9, nx=10, d=2)
# momenta are drawn with O(1) velocities, P ~ velocity / dt
WAVE_SAMPLER = SamplerSpec(max_mode=3, amplitude_decay=2.0, seed=0, momentum_scale=40.0, amplitude=0.5)
SCHRODINGER_SAMPLER = SamplerSpec(max_mode=2, amplitude_decay=3.0, seed=0, amplitude=1 / 3)
# posterior means are sums of many large terms; their DEL residual bottoms out near 1e-9
LEARNED_NEWTON = NewtonConfig(tol=1e-8)


def propagate_from(L: Density, U0, U1, mesh: Mesh, cfg: NewtonConfig = NewtonConfig()) -> DiscreteField:
    """Field on ``mesh`` whose first two levels are ``U0, U1``."""
    return propagate(temporal_lagrangian(L, mesh), U0, U1, mesh.nt - 2, cfg, mesh)


def repropagate(L: Density, reference: DiscreteField, cfg: NewtonConfig = LEARNED_NEWTON) -> DiscreteField:
    """Propagate ``L`` from the first two levels of ``reference`` over the same mesh."""
    return propagate_from(L, reference.slice(0), reference.slice(1), reference.mesh, cfg)


def wave_fields(n_fields: int, mesh: Mesh = WAVE_MESH, sampler: SamplerSpec = WAVE_SAMPLER,
                spec: WaveSpec | None = None, rng: np.random.Generator | None = None,
                cfg: NewtonConfig = NewtonConfig()) -> list[DiscreteField]:
    """Reference wave solutions from random ``(U0, P0)``; ``U1`` solves the momentum equation."""
    spec = spec or WaveSpec(mesh.dt, mesh.dx)
    rng = rng if rng is not None else np.random.default_rng(sampler.seed)
    L = wave_density(spec)
    TL = temporal_lagrangian(L, mesh)
    out = []
    for _ in range(n_fields):
        U0, P0 = sample_initial(sampler, mesh, rng)
        U1 = first_step(TL, U0, P0, cfg)
        out.append(propagate(TL, U0, U1, mesh.nt - 2, cfg, mesh))
    return out


def schrodinger_fields(n_fields: int, mesh: Mesh = SCHRODINGER_MESH,
                       sampler: SamplerSpec = SCHRODINGER_SAMPLER,
                       spec: SchrodingerSpec | None = None, rng: np.random.Generator | None = None,
                       cfg: NewtonConfig = NewtonConfig()) -> list[DiscreteField]:
    """Reference discrete Schroedinger solutions from random ``U0``.

    ``U1`` comes from one implicit-midpoint step of the continuous equation.
    """
    spec = spec or SchrodingerSpec(mesh.dt, mesh.dx)
    rng = rng if rng is not None else np.random.default_rng(sampler.seed)
    L = schrodinger_density(spec)
    out = []
    for _ in range(n_fields):
        U0, _ = sample_initial(sampler, mesh, rng, momentum=False)
        U1 = schrodinger_second_slice(U0, spec, mesh)
        out.append(propagate_from(L, U0, U1, mesh, cfg))
    return out


def cosine_field(mesh: Mesh, spec: WaveSpec | None = None, cfg: NewtonConfig = NewtonConfig()) -> DiscreteField:
    """Reference wave solution with ``u(0, x) = u(dt, x) = -cos(2 pi x)``."""
    spec = spec or WaveSpec(mesh.dt, mesh.dx)
    U = -np.cos(2 * np.pi * np.arange(mesh.nx) * mesh.dx)
    return propagate_from(wave_density(spec), U, U, mesh, cfg)


def travelling_wave_field(mesh: Mesh, k: int = 1, a1: float = 1.0, a2: float = 0.0,
                          spec: WaveSpec | None = None) -> DiscreteField:
    spec = spec or WaveSpec(mesh.dt, mesh.dx)
    return travelling_wave(k, a1, a2, spec, mesh)


__all__ = ["WAVE_MESH", "SCHRODINGER_MESH", "WAVE_SAMPLER", "SCHRODINGER_SAMPLER", "LEARNED_NEWTON",
           "propagate_from",
           "repropagate", "wave_fields", "schrodinger_fields", "cosine_field", "travelling_wave_field",
           "fourier_series"]
