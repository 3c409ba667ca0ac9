"""Learn a discrete Lagrangian for a nonlinear Schroedinger equation written as two real fields.

Run with ``python3 demos/schrodinger_demo.py``; the fit on 2100 stencils takes one to two minutes.
"""

import numpy as np

from lagrangian_gp import FOUR_POINT, StencilData, fit, posterior_density, schrodinger_fields
from lagrangian_gp.experiments import repropagate
from lagrangian_gp.gp import del_variances, training_residuals
from lagrangian_gp.mesh import field_stencil_array, l2_error


def main():
    # 30 reference solutions on a 9 x 10 mesh, components (Re psi, Im psi)
    fields = schrodinger_fields(30)
    stencils = np.concatenate([field_stencil_array(f, FOUR_POINT) for f in fields])
    print(f"training on {len(stencils)} four-point stencils from {len(fields)} solutions")

    model = fit(stencils, StencilData.zeros(FOUR_POINT, 2), np.ones(2), 1.0)
    res = training_residuals(model)
    sigma = np.sqrt(np.maximum(del_variances(model, model.stencils), 0.0))
    print(f"jitter {model.jitter:.3e}, max DEL on training stencils {res['del']:.2e}, "
          f"max sigma there {sigma.max():.2e}")
    L = posterior_density(model)

    errs = [l2_error(repropagate(L, f), f) for f in fields]
    print(f"recovery of all training fields: worst l2 error {max(errs):.2e}")

    # fresh initial data the model has never seen
    heldout = schrodinger_fields(5, rng=np.random.default_rng(12345))
    for k, f in enumerate(heldout):
        print(f"held-out field {k}: l2 error {l2_error(repropagate(L, f), f):.2e}")


if __name__ == "__main__":
    main()
