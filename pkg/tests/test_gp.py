import json

import numpy as np
import pytest
from scipy import linalg

import lagrangian_gp.gp as gp
from fd_oracle import functional, gram_entry
from lagrangian_gp.density import del_operator, first_subtuple, mm_minus
from lagrangian_gp.experiments import WAVE_MESH
from lagrangian_gp.gp import (ConditioningError, assemble_theta, dedup_stencils, del_variances, fit,
                              load_model, model_from_dict, model_to_dict, posterior_cov, posterior_density,
                              rkhs_norm, save_model, sigma_del_map, training_residuals)
from lagrangian_gp.kernels import DEL, EV_TAG, FunctionalSpec, KernelParams, cross_gram, del_block
from lagrangian_gp.mesh import FOUR_POINT, THREE_POINT, DiscreteField, StencilData, field_stencil_array

ZERO3 = StencilData.zeros(THREE_POINT, 1)


def test_theta_empty_data():
    theta = assemble_theta(np.zeros((0, 7, 1)), ZERO3)
    assert theta.shape == (2, 2)
    assert theta[1, 1] == 1.0
    base = np.zeros((7, 1))
    k = lambda x, y: float(np.exp(-0.5 * np.sum((x - y) ** 2)))
    Fm, Fe = functional("mm_minus", THREE_POINT, base), functional("ev", THREE_POINT, base)
    np.testing.assert_allclose(theta[0, 0], gram_entry(Fm, Fm, k)[0, 0], rtol=1e-6)
    np.testing.assert_allclose(theta[0, 1], gram_entry(Fm, Fe, k)[0, 0], atol=1e-8)


def test_theta_dimension_and_symmetry(rng):
    S = rng.normal(size=(6, 9, 2))
    theta = assemble_theta(S, StencilData.zeros(FOUR_POINT, 2))
    assert theta.shape == (6 * 2 + 2 + 1,) * 2
    assert np.array_equal(theta, theta.T)


def test_theta_entries_fd(wave_stencils):
    S = wave_stencils[[5, 200]]
    theta = assemble_theta(S, ZERO3)
    k = lambda x, y: float(np.exp(-0.5 * np.sum((x - y) ** 2)))
    F = [functional("del", THREE_POINT, S[0]), functional("del", THREE_POINT, S[1]),
         functional("mm_minus", THREE_POINT, np.zeros((7, 1))), functional("ev", THREE_POINT, np.zeros((7, 1)))]
    ref = np.array([[gram_entry(a, b, k)[0, 0] for b in F] for a in F])
    scale = np.max(np.abs(ref))
    np.testing.assert_allclose(theta, ref, rtol=1e-5, atol=1e-5 * scale)


def test_fit_without_data():
    m = fit(np.zeros((0, 7, 1)), ZERO3, 1.0, 1.0)
    L = posterior_density(m)
    assert abs(L.eval(first_subtuple(ZERO3)) - 1.0) <= 1e-10
    assert m.alpha.shape == (2,)


def test_fit_validation():
    with pytest.raises(ValueError):
        fit(np.zeros((0, 7, 1)), ZERO3, 1.0, 1.0, jitter=-1.0)
    with pytest.raises(ValueError):
        fit(np.zeros((0, 7, 1)), StencilData.zeros(FOUR_POINT, 1), 1.0, 1.0, kind=THREE_POINT)


def test_wave_fit_contract(wave_model, wave_learned):
    m = wave_model
    assert m.M == 760 and m.alpha.shape == (760 + 2,)
    assert m.residual <= 1e-8 * np.max(np.abs(m.y))
    res = training_residuals(m)
    assert res["del"] <= 1e-6
    assert res["mm_minus"] <= 1e-8 and res["ev"] <= 1e-8
    np.testing.assert_allclose(mm_minus(wave_learned, ZERO3), [1.0], atol=1e-8)
    assert abs(wave_learned.eval(first_subtuple(ZERO3)) - 1.0) <= 1e-8


def test_schrodinger_fit_contract(schrodinger_model):
    m = schrodinger_model
    assert m.M == 2100 and m.alpha.shape == (2100 * 2 + 3,)
    res = training_residuals(m)
    assert res["del"] <= 1e-6
    assert res["mm_minus"] <= 1e-8 and res["ev"] <= 1e-8
    np.testing.assert_allclose(mm_minus(posterior_density(m), StencilData.zeros(FOUR_POINT, 2)), [1.0, 1.0],
                               atol=1e-8)


def fd4(f, x, h=1e-3):
    """Fourth-order central differences; a wide step keeps cancellation noise in ``f`` small."""
    cols = []
    for e in np.eye(x.size) * h:
        cols.append((-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / 12 / h)
    return np.stack(cols, axis=0)


@pytest.mark.parametrize("model", ["wave_model", "schrodinger_model"])
def test_posterior_derivatives_fd(model, request, rng):
    L = posterior_density(request.getfixturevalue(model))
    for _ in range(3):
        x = rng.normal(size=L.dim) * 0.3
        g = L.grad(x)
        np.testing.assert_allclose(g, fd4(L.eval, x), rtol=1e-6, atol=1e-6 * np.max(np.abs(g)))
        H = L.hess(x)
        np.testing.assert_allclose(H, fd4(L.grad, x), rtol=1e-4, atol=1e-4 * np.max(np.abs(H)))


def test_dedup_keeps_posterior(wave_stencils):
    S = wave_stencils[:40]
    dup = np.concatenate([S, S[[3, 7]]])
    assert dedup_stencils(dup).shape[0] == 40
    a, b = fit(S, ZERO3, 1.0, 1.0, jitter=1e-12), fit(dup, ZERO3, 1.0, 1.0, jitter=1e-12)
    assert np.array_equal(a.alpha, b.alpha)


def test_conditioning_error(monkeypatch):
    def fail(theta, jitter):
        raise linalg.LinAlgError("not positive definite")
    monkeypatch.setattr(gp, "_factorize", fail)
    with pytest.raises(ConditioningError) as info:
        fit(np.zeros((0, 7, 1)), ZERO3, 1.0, 1.0)
    assert info.value.min_eigenvalue is not None


def test_jitter_escalates_and_is_recorded(wave_stencils):
    m = fit(wave_stencils, ZERO3, 1.0, 1.0, jitter=0.0)
    assert m.jitter > 0  # Theta alone is numerically singular
    A = assemble_theta(m.stencils, ZERO3) + m.jitter * np.eye(m.alpha.size)
    assert np.max(np.abs(A @ m.alpha - m.y)) <= 1e-8


# --- covariance ------------------------------------------------------------

def test_prior_variance_without_conditioning(rng):
    m = fit(np.zeros((0, 7, 1)), None, kind=THREE_POINT)
    f = FunctionalSpec(EV_TAG, rng.normal(size=3))
    assert posterior_cov(m, f) == pytest.approx(1.0)


def test_training_constraints_have_no_variance(wave_model):
    S = wave_model.stencils[::40]
    var = del_variances(wave_model, S)
    assert np.max(np.abs(var)) <= 1e-8
    f = FunctionalSpec(DEL, StencilData(THREE_POINT, S[0]))
    assert abs(posterior_cov(wave_model, f)[0, 0]) <= 1e-8


def test_heldout_variance_dense_oracle(wave_stencils, rng):
    S = wave_stencils[:5]
    m = fit(S, ZERO3, 1.0, 1.0)
    s_new = StencilData(THREE_POINT, rng.normal(size=(7, 1)))
    f = FunctionalSpec(DEL, s_new)
    val = posterior_cov(m, f)[0, 0]
    # dense reconstruction with a generic solver
    theta = assemble_theta(S, ZERO3) + m.jitter * np.eye(S.shape[0] + 2)
    from lagrangian_gp.gp import conditioning_block
    kf = cross_gram(conditioning_block(S, ZERO3, THREE_POINT), del_block([s_new], THREE_POINT))
    prior = cross_gram(del_block([s_new], THREE_POINT), del_block([s_new], THREE_POINT))[0, 0]
    dense = prior - float(kf[:, 0] @ np.linalg.solve(theta, kf[:, 0]))
    assert 0 < val <= prior
    assert val == pytest.approx(dense, rel=1e-8)


def test_sigma_map(wave_model, wave_data):
    unc = sigma_del_map(wave_model, wave_data[0])
    assert unc.sigma.shape == (19, 20, 1)
    assert np.all(unc.sigma >= 0) and np.all(np.isfinite(unc.sigma))
    assert unc.sigma.max() <= 1e-5
    rows = list(unc.rows())
    assert len(rows) == 19 * 20 and rows[0][:3] == (1, 0, 0)
    far = DiscreteField(WAVE_MESH, 3 * np.cos(np.linspace(0, 40, 420)).reshape(21, 20, 1))
    assert sigma_del_map(wave_model, far).sigma.max() > unc.sigma.max()


def test_schrodinger_sigma_on_training(schrodinger_model, schrodinger_data):
    unc = sigma_del_map(schrodinger_model, schrodinger_data[0])
    assert unc.sigma.shape == (7, 10, 2)
    assert unc.sigma.max() <= 1e-5


# --- RKHS norm ------------------------------------------------------------

def test_rkhs_norm_zero_data():
    assert rkhs_norm(fit(np.zeros((0, 7, 1)), ZERO3, 0.0, 0.0)) == 0.0


def test_rkhs_norm_gram_identity(wave_stencils):
    S = wave_stencils[[0, 50, 100, 300, 500]]
    m = fit(S, ZERO3, 1.0, 1.0)
    theta = assemble_theta(S, ZERO3)
    # ||sum a_n phi_n K||^2 = a^T Theta a
    assert rkhs_norm(m) == pytest.approx(np.sqrt(m.alpha @ theta @ m.alpha), rel=1e-6)


# --- serialisation ----------------------------------------------------------

def test_model_roundtrip(tmp_path, wave_model, rng):
    save_model(wave_model, tmp_path / "m.json")
    m2 = load_model(tmp_path / "m.json")
    assert np.array_equal(m2.alpha, wave_model.alpha)
    assert np.array_equal(m2.stencils, wave_model.stencils)
    assert m2.jitter == wave_model.jitter and m2.kernel == wave_model.kernel
    x = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(posterior_density(m2).eval(x), posterior_density(wave_model).eval(x))
    obj = json.loads((tmp_path / "m.json").read_text())
    for key in ("kind", "kernel", "jitter", "base", "p_b", "c_b", "stencils", "alpha"):
        assert key in obj


def test_model_missing_key():
    obj = model_to_dict(fit(np.zeros((0, 7, 1)), ZERO3, 1.0, 1.0))
    del obj["alpha"]
    with pytest.raises(ValueError, match="alpha"):
        model_from_dict(obj)


def test_empty_model_roundtrip(tmp_path):
    m = fit(np.zeros((0, 9, 2)), StencilData.zeros(FOUR_POINT, 2), [1.0, 1.0], 1.0)
    save_model(m, tmp_path / "m.json")
    m2 = load_model(tmp_path / "m.json")
    assert m2.M == 0 and m2.d == 2
    assert np.array_equal(m2.alpha, m.alpha)


def test_lengthscale_knob(wave_stencils):
    m = fit(wave_stencils[:50], ZERO3, 1.0, 1.0, kernel=KernelParams(lengthscale=2.0))
    assert training_residuals(m)["del"] <= 1e-6
    assert load_model_roundtrip(m).kernel.lengthscale == 2.0


def load_model_roundtrip(m):
    return model_from_dict(json.loads(json.dumps(model_to_dict(m))))
