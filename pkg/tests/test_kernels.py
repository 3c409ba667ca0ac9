import itertools

import numpy as np
import pytest

from fd_oracle import functional, gram_entry
from lagrangian_gp.kernels import (DEL, EV_TAG, MM_MINUS, FunctionalSpec, KernelExpansion, KernelParams,
                                   UnsupportedOrderError, apply_functional, concat_blocks, cross_gram,
                                   del_block, ev_block, k_derivative, k_eval, mm_minus_block)
from lagrangian_gp.mesh import FOUR_POINT, THREE_POINT, StencilData

P = KernelParams(lengthscale=1.3, variance=0.7)


def test_params_validation():
    with pytest.raises(ValueError):
        KernelParams(lengthscale=0.0)
    with pytest.raises(ValueError):
        KernelParams(variance=-1.0)


def test_k_eval_closed_forms(rng):
    x = rng.normal(size=6)
    assert k_eval(x, x) == 1.0
    y = rng.normal(size=6)
    assert k_eval(x, y) == k_eval(y, x)
    assert k_eval(np.zeros(3), np.array([1.0, 1.0, 0.0])) == pytest.approx(np.exp(-1.0), rel=1e-15)
    assert k_eval(x, x, P) == pytest.approx(0.7)
    with pytest.raises(ValueError):
        k_eval(np.zeros(3), np.zeros(4))


def test_k_derivative_at_diagonal(rng):
    x = rng.normal(size=4)
    for i in range(4):
        assert k_derivative(x, x, dx=(i,)) == 0.0
        assert k_derivative(x, x, dx=(i,), dy=(i,)) == pytest.approx(1.0)
        assert k_derivative(x, x, P, dx=(i,), dy=(i,)) == pytest.approx(0.7 / 1.3**2)


def _fd(x, y, dx, dy, h=1e-4):
    """Central difference of one lower-order derivative."""
    if dy:
        e = np.zeros_like(y)
        e[dy[-1]] = h
        return (k_derivative(x, y + e, P, dx, dy[:-1]) - k_derivative(x, y - e, P, dx, dy[:-1])) / (2 * h)
    e = np.zeros_like(x)
    e[dx[-1]] = h
    return (k_derivative(x + e, y, P, dx[:-1]) - k_derivative(x - e, y, P, dx[:-1])) / (2 * h)


def test_all_derivatives_fd(rng):
    x, y = rng.normal(size=3) * 0.7, rng.normal(size=3) * 0.7
    worst = 0.0
    for order in (1, 2, 3):
        for idx in itertools.product(range(3), repeat=order):
            for nx in range(order + 1):
                dx, dy = idx[:nx], idx[nx:]
                exact = k_derivative(x, y, P, dx, dy)
                approx = _fd(x, y, dx, dy)
                worst = max(worst, abs(exact - approx) / max(1e-3, abs(exact)))
    assert worst <= 1e-6


def test_order_four_unsupported():
    with pytest.raises(UnsupportedOrderError):
        k_derivative(np.zeros(2), np.zeros(2), dx=(0, 1), dy=(0, 1))


def test_gram_positive_definite(rng):
    pts = rng.normal(size=(50, 6))
    G = cross_gram(ev_block(pts), ev_block(pts))
    assert np.array_equal(G, G.T)
    assert np.linalg.eigvalsh(G).min() > 0
    np.testing.assert_allclose(G, k_eval(pts[:, None], pts[None]), rtol=1e-13)


def test_apply_functional_ev(rng):
    z, y = rng.normal(size=6), rng.normal(size=6)
    f = FunctionalSpec(EV_TAG, z)
    assert apply_functional("first", f, y, P) == pytest.approx(k_eval(z, y, P), rel=1e-15)
    assert apply_functional("second", f, y, P) == pytest.approx(k_eval(y, z, P), rel=1e-15)


@pytest.mark.parametrize("kind,d", [(THREE_POINT, 1), (THREE_POINT, 2), (FOUR_POINT, 2)])
@pytest.mark.parametrize("tag", [DEL, MM_MINUS])
def test_apply_functional_matches_slotwise(kind, d, tag, rng):
    n = 7 if kind == THREE_POINT else 9
    q = 3 if kind == THREE_POINT else 4
    s = rng.normal(size=(n, d)) * 0.5
    y = rng.normal(size=q * d) * 0.5
    f = FunctionalSpec(tag, StencilData(kind, s))
    oracle = functional("del" if tag == DEL else "mm_minus", kind, s, h=1e-5)
    ref = oracle(lambda x: k_eval(x, y, P))
    np.testing.assert_allclose(apply_functional("first", f, y, P), ref, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(apply_functional("second", f, y, P), ref, rtol=1e-8, atol=1e-10)


def test_apply_functional_errors(rng):
    f = FunctionalSpec(DEL, StencilData.zeros(THREE_POINT, 1))
    with pytest.raises(ValueError):
        apply_functional("first", f, np.zeros(4))
    with pytest.raises(ValueError):
        apply_functional("middle", f, np.zeros(3))
    with pytest.raises(ValueError):
        FunctionalSpec("curl", None)
    with pytest.raises(ValueError):
        FunctionalSpec(DEL, np.zeros(3))


@pytest.mark.parametrize("kind", [THREE_POINT, FOUR_POINT])
def test_block_symmetry(kind, rng):
    n = 7 if kind == THREE_POINT else 9
    s1, s2 = rng.normal(size=(1, n, 2)), rng.normal(size=(1, n, 2))
    A = concat_blocks([del_block(s1, kind), mm_minus_block(s1, kind)])
    B = concat_blocks([del_block(s2, kind), mm_minus_block(s2, kind)])
    np.testing.assert_allclose(cross_gram(A, B, P), cross_gram(B, A, P).T, rtol=1e-14, atol=1e-16)


def test_del_del_gram_fd(rng):
    kind = THREE_POINT
    s1, s2 = rng.normal(size=(7, 1)) * 0.5, rng.normal(size=(7, 1)) * 0.5
    G = cross_gram(del_block(s1[None], kind), del_block(s2[None], kind), P)
    ref = gram_entry(functional("del", kind, s1), functional("del", kind, s2), lambda x, y: k_eval(x, y, P))
    np.testing.assert_allclose(G, ref, rtol=1e-6, atol=1e-8)


def test_chunking_invariant(rng):
    S = rng.normal(size=(30, 9, 2))
    A, B = del_block(S[:20], FOUR_POINT), del_block(S[10:], FOUR_POINT)
    np.testing.assert_allclose(cross_gram(A, B, P, chunk_bytes=1e3), cross_gram(A, B, P), rtol=1e-14, atol=1e-15)


def test_kernel_expansion(rng):
    S = rng.normal(size=(5, 7, 2)) * 0.5
    block = concat_blocks([del_block(S, THREE_POINT), ev_block(rng.normal(size=(2, 6)))])
    coef = rng.normal(size=block.n_rows)
    h = KernelExpansion(block, coef, P)
    x = rng.normal(size=(4, 6)) * 0.5
    np.testing.assert_allclose(h.eval(x), cross_gram(block, ev_block(x), P).T @ coef, rtol=1e-12, atol=1e-14)
    eps = 1e-6
    for xi in x:
        fd_g = np.array([(h.eval(xi + eps * e) - h.eval(xi - eps * e)) / (2 * eps) for e in np.eye(6)])
        np.testing.assert_allclose(h.grad(xi), fd_g, rtol=1e-6, atol=1e-8)
        fd_h = np.array([(h.grad(xi + eps * e) - h.grad(xi - eps * e)) / (2 * eps) for e in np.eye(6)])
        np.testing.assert_allclose(h.hess(xi), fd_h, rtol=1e-5, atol=1e-7)
        np.testing.assert_allclose(h.hess(xi), h.hess(xi).T, rtol=0, atol=1e-14)
