"""Learn a discrete Lagrangian for the 1D wave equation from two solutions, then predict unseen motion.

Run with ``python3 demos/wave_demo.py``; takes a few seconds.
"""

import numpy as np

from lagrangian_gp import StencilData, THREE_POINT, fit, posterior_density, sigma_del_map, wave_fields
from lagrangian_gp.experiments import WAVE_MESH, cosine_field, repropagate, travelling_wave_field
from lagrangian_gp.gp import rkhs_norm, training_residuals
from lagrangian_gp.mesh import Mesh, field_stencil_array, l2_error


def main():
    # two random reference solutions on a 21 x 20 mesh give 760 training stencils
    fields = wave_fields(2)
    stencils = np.concatenate([field_stencil_array(f, THREE_POINT) for f in fields])
    print(f"training on {len(stencils)} stencils from {len(fields)} wave solutions")

    # condition on DEL = 0 plus the normalization L(0) = 1, momentum 1 at the zero stencil
    model = fit(stencils, StencilData.zeros(THREE_POINT, 1), 1.0, 1.0)
    res = training_residuals(model)
    print(f"jitter {model.jitter:.3e}, RKHS norm {rkhs_norm(model):.4f}, "
          f"max DEL on training stencils {res['del']:.2e}")
    L = posterior_density(model)

    # the learned density reproduces training data and generalizes to new initial data
    print(f"recovery of training field 0: l2 error {l2_error(repropagate(L, fields[0]), fields[0]):.2e}")
    cos = cosine_field(WAVE_MESH)
    print(f"cosine initial data: l2 error {l2_error(repropagate(L, cos), cos):.2e}")

    tw_mesh = Mesh(WAVE_MESH.dt, WAVE_MESH.dx, 16, WAVE_MESH.nx, 1)
    ref = travelling_wave_field(tw_mesh)
    pred = repropagate(L, ref)
    print(f"travelling wave over t in [0, {(tw_mesh.nt - 1) * tw_mesh.dt}]: l2 error {l2_error(pred, ref):.2e}")

    # the posterior standard deviation of DEL flags where the prediction is least trustworthy
    sigma = sigma_del_map(model, pred).sigma
    print("max sigma of DEL per time level along the travelling-wave prediction:")
    for i, s in enumerate(sigma.max(axis=(1, 2)), start=1):
        print(f"  level {i:2d}  {s:.3e}")


if __name__ == "__main__":
    main()
