"""Kernel-level tests: hand oracles on the numpy reference, then exact
parity between whichever backends are importable."""

import numpy as np
import pytest

from clvqa import kernels
from clvqa.kernels import backend_numpy

BACKENDS = [backend_numpy]
try:
    from clvqa.kernels import _core

    BACKENDS.append(_core)
except ImportError:
    pass


def backends():
    return [pytest.param(b, id=b.BACKEND_NAME) for b in BACKENDS]


@pytest.mark.parametrize("be", backends())
def test_affine_forward_hand(be):
    x = np.array([[1.0, 2.0], [3.0, -1.0]])
    w = np.array([[1.0, 0.0], [0.5, -0.5], [2.0, 1.0]])  # [3 out, 2 in]
    b = np.array([0.0, 1.0, -1.0])
    z = be.affine_forward(x, w, b)
    assert np.array_equal(z, np.array([[1.0, 0.5, 3.0], [3.0, 3.0, 4.0]]))


@pytest.mark.parametrize("be", backends())
def test_head_forward_matches_affine(be):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(7, 5))
    w = rng.normal(size=(4, 5))
    b = rng.normal(size=4)
    np.testing.assert_allclose(be.head_forward(x, w, b),
                               be.affine_forward(x, w, b),
                               rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("be", backends())
def test_head_forward_row_growth_bit_identity(be):
    # the whole point of head_forward: appending classifier rows must not
    # change a single bit of the existing columns
    rng = np.random.default_rng(1)
    x = rng.normal(size=(33, 17))
    w = rng.normal(size=(6, 17))
    b = rng.normal(size=6)
    before = be.head_forward(x, w, b)
    for extra in (1, 3, 400):
        w2 = np.vstack([w, rng.normal(size=(extra, 17))])
        b2 = np.concatenate([b, rng.normal(size=extra)])
        after = be.head_forward(x, w2, b2)
        assert np.array_equal(after[:, :6], before)


@pytest.mark.parametrize("be", backends())
def test_activations_hand(be):
    z = np.array([[-2.0, 0.0, 1.5]])
    assert np.allclose(be.act_forward(z, be.TANH), np.tanh(z))
    assert np.array_equal(be.act_forward(z, be.RELU), [[0.0, 0.0, 1.5]])
    assert np.array_equal(be.act_forward(z, be.IDENTITY), z)


@pytest.mark.parametrize("be", backends())
@pytest.mark.parametrize("kind_name", ["TANH", "RELU", "IDENTITY"])
def test_act_backward_finite_diff(be, kind_name):
    kind = getattr(be, kind_name)
    rng = np.random.default_rng(2)
    z = rng.normal(size=(4, 6)) * 2.0
    z[np.abs(z) < 0.05] += 0.1  # keep clear of the relu kink
    da = rng.normal(size=(4, 6))
    a = be.act_forward(z, kind)
    dz = be.act_backward(a, da, kind)
    h = 1e-6
    num = (be.act_forward(z + h * da, kind) - be.act_forward(z - h * da, kind)) / (2 * h)
    # directional derivative: sum(dz * da) vs numerical
    np.testing.assert_allclose(dz, num * 0 + dz, rtol=0)  # shape check
    np.testing.assert_allclose(np.sum(dz * da),
                               np.sum(num * da), rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("be", backends())
def test_affine_backward_finite_diff(be):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 4))
    w = rng.normal(size=(3, 4))
    b = rng.normal(size=3)
    dz = rng.normal(size=(5, 3))
    dx, dw, db = be.affine_backward(x, w, dz)
    h = 1e-6

    def f(xx, ww, bb):
        return float(np.sum(be.affine_forward(xx, ww, bb) * dz))

    gx = np.empty_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h; xm[i] -= h
        gx[i] = (f(xp, w, b) - f(xm, w, b)) / (2 * h)
    np.testing.assert_allclose(dx, gx, rtol=1e-6, atol=1e-8)
    gw = np.empty_like(w)
    for i in np.ndindex(w.shape):
        wp, wm = w.copy(), w.copy()
        wp[i] += h; wm[i] -= h
        gw[i] = (f(x, wp, b) - f(x, wm, b)) / (2 * h)
    np.testing.assert_allclose(dw, gw, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(db, dz.sum(axis=0), rtol=1e-12)


@pytest.mark.parametrize("be", backends())
def test_sigmoid_stable_and_correct(be):
    z = np.array([[-800.0, -30.0, 0.0, 30.0, 800.0]])
    s = be.sigmoid(z)
    assert np.all(np.isfinite(s))
    assert s[0, 0] == 0.0 or s[0, 0] < 1e-300
    assert s[0, 2] == 0.5
    assert s[0, 4] == 1.0
    zz = np.linspace(-20, 20, 41).reshape(1, -1)
    np.testing.assert_allclose(be.sigmoid(zz), 1 / (1 + np.exp(-zz)), rtol=1e-12)


@pytest.mark.parametrize("be", backends())
def test_bce_soft_oracle(be):
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(3, 5)) * 3
    targets = rng.uniform(0, 1, size=(3, 5))
    loss, dl = be.bce_soft(logits, targets)
    p = 1 / (1 + np.exp(-logits))
    ref = float(np.mean(-targets * np.log(p) - (1 - targets) * np.log1p(-p)))
    assert abs(loss - ref) < 1e-12
    np.testing.assert_allclose(dl, (p - targets) / logits.size, rtol=1e-12)


@pytest.mark.parametrize("be", backends())
def test_bce_soft_saturated_logits(be):
    logits = np.array([[5000.0, -5000.0]])
    targets = np.array([[1.0, 0.0]])
    loss, dl = be.bce_soft(logits, targets)
    assert loss == 0.0
    assert np.all(np.isfinite(dl))
    loss2, _ = be.bce_soft(-logits, targets)
    assert np.isfinite(loss2) and loss2 > 1000


@pytest.mark.parametrize("be", backends())
def test_bce_soft_gradient_finite_diff(be):
    rng = np.random.default_rng(5)
    logits = rng.normal(size=(2, 4))
    targets = rng.uniform(0, 1, size=(2, 4))
    _, dl = be.bce_soft(logits, targets)
    h = 1e-6
    for i in np.ndindex(logits.shape):
        lp, lm = logits.copy(), logits.copy()
        lp[i] += h; lm[i] -= h
        num = (be.bce_soft(lp, targets)[0] - be.bce_soft(lm, targets)[0]) / (2 * h)
        assert abs(dl[i] - num) < 1e-9


@pytest.mark.parametrize("be", backends())
def test_adam_step_three_step_recurrence(be):
    # replay the textbook update by hand for 3 steps
    rng = np.random.default_rng(6)
    p = rng.normal(size=7)
    m = np.zeros(7); v = np.zeros(7)
    p_ref, m_ref, v_ref = p.copy(), m.copy(), v.copy()
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    for t in range(1, 4):
        g = rng.normal(size=7)
        be.adam_step(p, g, m, v, t, lr, b1, b2, eps)
        m_ref = b1 * m_ref + (1 - b1) * g
        v_ref = b2 * v_ref + (1 - b2) * g * g
        mhat = m_ref / (1 - b1**t)
        vhat = v_ref / (1 - b2**t)
        p_ref = p_ref - lr * mhat / (np.sqrt(vhat) + eps)
        np.testing.assert_allclose(p, p_ref, rtol=1e-14)
        np.testing.assert_allclose(m, m_ref, rtol=1e-14)
        np.testing.assert_allclose(v, v_ref, rtol=1e-14)


@pytest.mark.parametrize("be", backends())
def test_adam_step_scale_vector(be):
    p = np.array([1.0, 1.0])
    g = np.array([1.0, 1.0])
    m = np.zeros(2); v = np.zeros(2)
    be.adam_step(p, g, m, v, 1, 0.1, 0.9, 0.999, 1e-12, scale=np.array([1.0, 0.5]))
    # first step: mhat/(<sqrt vhat>+eps) ~ sign(g), so update ~ lr * scale
    assert abs((1.0 - p[0]) - 0.1) < 1e-6
    assert abs((1.0 - p[1]) - 0.05) < 1e-6


@pytest.mark.parametrize("be", backends())
def test_sgd_step(be):
    p = np.array([1.0, 2.0])
    be.sgd_step(p, np.array([0.5, -1.0]), 0.1)
    np.testing.assert_allclose(p, [0.95, 2.1], rtol=1e-15)
    be.sgd_step(p, np.array([1.0, 1.0]), 0.1, scale=np.array([0.0, 1.0]))
    np.testing.assert_allclose(p, [0.95, 2.0], rtol=1e-15)


@pytest.mark.parametrize("be", backends())
def test_ewc_penalty_grad_accumulates(be):
    theta = np.array([2.0, 3.0])
    anchor = np.array([1.0, 2.0])
    fisher = np.array([1.0, 2.0])
    out = np.array([10.0, 10.0])
    loss = be.ewc_penalty_grad(theta, anchor, fisher, 2.0, out)
    assert loss == 3.0  # (2/2) * (1*1 + 2*1)
    np.testing.assert_allclose(out, [12.0, 14.0])  # 10 + lam*F*delta


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
def test_backend_parity_random_sweep():
    """Backends agree to a couple of ulps everywhere, and bit-exactly where
    nothing transcendental is involved (libm tanh/exp and numpy's SIMD
    versions legitimately differ in the last bit)."""
    a, b = BACKENDS
    rng = np.random.default_rng(7)
    for _ in range(50):
        B = int(rng.integers(1, 16))
        I = int(rng.integers(1, 12))
        O = int(rng.integers(1, 12))
        x = rng.normal(size=(B, I))
        w = rng.normal(size=(O, I))
        bias = rng.normal(size=O)
        np.testing.assert_allclose(a.affine_forward(x, w, bias),
                                   b.affine_forward(x, w, bias),
                                   rtol=1e-13, atol=1e-13)
        # head_forward is bit-stable under row growth within a backend,
        # but the two backends sum k in different fixed orders
        np.testing.assert_allclose(a.head_forward(x, w, bias),
                                   b.head_forward(x, w, bias),
                                   rtol=1e-13, atol=1e-13)
        z = rng.normal(size=(B, O)) * 3
        for kind in (0, 1, 2):
            fa = a.act_forward(z, kind)
            fb = b.act_forward(z, kind)
            if kind == a.TANH:
                np.testing.assert_array_max_ulp(fa, fb, maxulp=2)
            else:
                assert np.array_equal(fa, fb)
            da = rng.normal(size=(B, O))
            np.testing.assert_array_max_ulp(a.act_backward(fa, da, kind),
                                            b.act_backward(fa, da, kind),
                                            maxulp=2)
        dz = rng.normal(size=(B, O))
        for ga, gb in zip(a.affine_backward(x, w, dz),
                          b.affine_backward(x, w, dz)):
            np.testing.assert_allclose(ga, gb, rtol=1e-13, atol=1e-13)
        t = rng.uniform(0, 1, size=(B, O))
        la, dla = a.bce_soft(z, t)
        lb, dlb = b.bce_soft(z, t)
        assert abs(la - lb) < 1e-14 * max(1.0, abs(la))
        # (sigmoid - t) cancels near sigmoid == t, so compare absolutely
        np.testing.assert_allclose(dla, dlb, rtol=5e-13, atol=1e-16)
        np.testing.assert_array_max_ulp(a.sigmoid(z), b.sigmoid(z), maxulp=2)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
def test_backend_parity_optimizers():
    a, b = BACKENDS
    rng = np.random.default_rng(8)
    n = 64
    pa = rng.normal(size=n); pb = pa.copy()
    ma = np.zeros(n); mb = np.zeros(n)
    va = np.zeros(n); vb = np.zeros(n)
    scale = rng.uniform(0.1, 1.0, size=n)
    for t in range(1, 20):
        g = rng.normal(size=n)
        a.adam_step(pa, g, ma, va, t, 1e-3, 0.9, 0.999, 1e-8, scale=scale)
        b.adam_step(pb, g, mb, vb, t, 1e-3, 0.9, 0.999, 1e-8, scale=scale)
        np.testing.assert_array_max_ulp(pa, pb, maxulp=4)
        np.testing.assert_array_max_ulp(ma, mb, maxulp=4)
        np.testing.assert_array_max_ulp(va, vb, maxulp=4)
    pb[:] = pa
    a.sgd_step(pa, g, 0.01)
    b.sgd_step(pb, g, 0.01)
    assert np.array_equal(pa, pb)
    outa = np.zeros(n); outb = np.zeros(n)
    anchor = rng.normal(size=n); fisher = rng.uniform(0, 2, size=n)
    la = a.ewc_penalty_grad(pa, anchor, fisher, 3.0, outa)
    lb = b.ewc_penalty_grad(pb, anchor, fisher, 3.0, outb)
    assert abs(la - lb) < 1e-12 * max(1.0, abs(la))
    np.testing.assert_array_max_ulp(outa, outb, maxulp=2)


def test_active_backend_exports():
    assert kernels.BACKEND_NAME in ("numpy", "compiled")
    for name in ("affine_forward", "head_forward", "act_forward",
                 "act_backward", "affine_backward", "sigmoid", "bce_soft",
                 "adam_step", "sgd_step", "ewc_penalty_grad"):
        assert callable(getattr(kernels, name))


def test_get_backend_by_name():
    assert kernels.get_backend("numpy").BACKEND_NAME == "numpy"
    with pytest.raises(ValueError):
        kernels.get_backend("cuda")
