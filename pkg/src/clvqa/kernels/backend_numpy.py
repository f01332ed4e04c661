"""Reference numpy implementation of the training kernels.

The compiled backend (``clvqa.kernels._core``) mirrors these signatures
exactly; this module is the import-time fallback and the ground truth the
extension is tested and benchmarked against.

All kernels work on float64 C-contiguous arrays.  Layer weights are stored
[out, in] so an affine layer computes ``z = x @ w.T + b``.
"""

import numpy as np

BACKEND_NAME = "numpy"

TANH = 0
RELU = 1
IDENTITY = 2


def affine_forward(x, w, b):
    """x [B,I], w [O,I], b [O] -> z [B,O]."""
    return x @ w.T + b


def head_forward(x, w, b):
    """Like affine_forward but row-stable: each output cell is an
    independent dot product in fixed k order, so appending rows to w leaves
    existing outputs bit-identical.  (BLAS gemm does not guarantee that:
    its summation order shifts with the output width.)"""
    return np.einsum("bh,ch->bc", x, w, optimize=False) + b


def act_forward(z, kind):
    if kind == TANH:
        return np.tanh(z)
    if kind == RELU:
        return np.maximum(z, 0.0)
    if kind == IDENTITY:
        return z.copy()
    raise ValueError(f"unknown activation kind {kind}")


def act_backward(a, da, kind):
    """Gradient through the nonlinearity, using post-activation values a."""
    if kind == TANH:
        return da * (1.0 - a * a)
    if kind == RELU:
        return da * (a > 0.0)
    if kind == IDENTITY:
        return da.copy()
    raise ValueError(f"unknown activation kind {kind}")


def affine_backward(x, w, dz):
    """Returns (dx, dw, db) for z = x @ w.T + b."""
    dw = dz.T @ x
    db = dz.sum(axis=0)
    dx = dz @ w
    return dx, dw, db


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_soft(logits, targets):
    """Mean sigmoid BCE against soft targets in [0,1].

    Returns (loss, dlogits) where loss averages over all B*C cells and
    dlogits = (sigmoid(logits) - targets) / (B*C).  Uses the stable
    formulation loss_cell = softplus(z) - t*z, softplus(z) = max(z,0)
    + log1p(exp(-|z|)), so saturated logits never overflow.
    """
    z = logits
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    loss = float(np.mean(softplus - targets * z))
    dlogits = (sigmoid(z) - targets) / z.size
    return loss, dlogits


def adam_step(p, g, m, v, t, lr, beta1, beta2, eps, scale=None):
    """One Adam update, in place on p, m, v.

    t is the 1-based step count after this update.  scale is an optional
    per-coordinate learning-rate multiplier (parameter groups).
    """
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    upd = lr * mhat / (np.sqrt(vhat) + eps)
    if scale is not None:
        upd *= scale
    p -= upd


def sgd_step(p, g, lr, scale=None):
    """One SGD update, in place on p."""
    upd = lr * g
    if scale is not None:
        upd *= scale
    p -= upd


def ewc_penalty_grad(theta, anchor, fisher, lam, out):
    """Accumulates lam * fisher * (theta - anchor) into out; returns the
    penalty value (lam/2) * sum(fisher * (theta - anchor)^2)."""
    delta = theta - anchor
    out += lam * fisher * delta
    return float(0.5 * lam * np.sum(fisher * delta * delta))
