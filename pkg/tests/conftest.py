"""Shared fixtures: training data and fitted models are built once per session."""

import numpy as np
import pytest

from lagrangian_gp.experiments import schrodinger_fields, wave_fields
from lagrangian_gp.gp import fit, posterior_density
from lagrangian_gp.mesh import FOUR_POINT, THREE_POINT, StencilData, field_stencil_array


def stack(fields, kind):
    return np.concatenate([field_stencil_array(f, kind) for f in fields])


@pytest.fixture(scope="session")
def wave_data():
    return wave_fields(2)


@pytest.fixture(scope="session")
def wave_stencils(wave_data):
    return stack(wave_data, THREE_POINT)


@pytest.fixture(scope="session")
def wave_model(wave_stencils):
    return fit(wave_stencils, StencilData.zeros(THREE_POINT, 1), 1.0, 1.0)


@pytest.fixture(scope="session")
def wave_learned(wave_model):
    return posterior_density(wave_model)


@pytest.fixture(scope="session")
def schrodinger_data():
    return schrodinger_fields(30)


@pytest.fixture(scope="session")
def schrodinger_heldout():
    return schrodinger_fields(5, rng=np.random.default_rng(12345))


@pytest.fixture(scope="session")
def schrodinger_model(schrodinger_data):
    return fit(stack(schrodinger_data, FOUR_POINT), StencilData.zeros(FOUR_POINT, 2), np.ones(2), 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
