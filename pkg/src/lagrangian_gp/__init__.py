"""Gaussian-process learning of discrete Lagrangian densities for field theories on periodic meshes."""

from .convergence import ConvergenceReport, convergence_report, nested_fits
from .density import (Density, DivergenceSpec, FunctionDensity, del_operator, gauge_transform, mm_minus,
                      mm_plus, normalize_density, temporal_lagrangian)
from .experiments import (cosine_field, repropagate, schrodinger_fields, travelling_wave_field,
                          wave_fields)
from .gp import (TrainedModel, fit, load_model, posterior_density, rkhs_norm, save_model,
                 sigma_del_map)
from .integrator import NewtonConfig, NewtonDivergenceError, propagate
from .kernels import KernelParams
from .mesh import FOUR_POINT, THREE_POINT, DiscreteField, Mesh, StencilData, read_field, write_field
from .reference import SchrodingerSpec, WaveSpec, schrodinger_density, wave_density

__version__ = "0.1.0"

__all__ = [
    "ConvergenceReport", "convergence_report", "nested_fits",
    "Density", "DivergenceSpec", "FunctionDensity", "del_operator", "gauge_transform", "mm_minus",
    "mm_plus", "normalize_density", "temporal_lagrangian",
    "cosine_field", "repropagate", "schrodinger_fields", "travelling_wave_field", "wave_fields",
    "TrainedModel", "fit", "load_model", "posterior_density", "rkhs_norm", "save_model", "sigma_del_map",
    "NewtonConfig", "NewtonDivergenceError", "propagate",
    "KernelParams",
    "FOUR_POINT", "THREE_POINT", "DiscreteField", "Mesh", "StencilData", "read_field", "write_field",
    "SchrodingerSpec", "WaveSpec", "schrodinger_density", "wave_density",
]
