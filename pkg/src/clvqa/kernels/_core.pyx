# cython: language_level=3
"""Compiled training kernels.

Mirrors clvqa.kernels.backend_numpy function-for-function.  Matmuls go
through BLAS dgemm (row-major handled by computing the transposed product
in Fortran order); elementwise kernels are single fused loops, which is
where most of the win over numpy comes from at desk-scale shapes.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log1p, sqrt, tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND_NAME = "compiled"

TANH = 0
RELU = 1
IDENTITY = 2

ctypedef cnp.float64_t f64


cdef void _gemm(char ta, char tb, int m, int n, int k,
                double* a, int lda, double* b, int ldb,
                double* c, int ldc) nogil:
    cdef double one = 1.0
    cdef double zero = 0.0
    dgemm(&ta, &tb, &m, &n, &k, &one, a, &lda, b, &ldb, &zero, c, &ldc)


def affine_forward(cnp.ndarray[f64, ndim=2] x,
                   cnp.ndarray[f64, ndim=2] w,
                   cnp.ndarray[f64, ndim=1] b):
    """x [B,I], w [O,I], b [O] -> z [B,O]."""
    cdef int bsz = x.shape[0]
    cdef int idim = x.shape[1]
    cdef int odim = w.shape[0]
    cdef cnp.ndarray[f64, ndim=2] z = np.empty((bsz, odim), dtype=np.float64)
    cdef Py_ssize_t i, j
    if bsz > 0 and odim > 0:
        if idim > 0:
            # Z^T (O x B, fortran view of C-order Z) = W^f^T . X^f
            _gemm(b'T', b'N', odim, bsz, idim,
                  &w[0, 0], idim, &x[0, 0], idim, &z[0, 0], odim)
        else:
            z[:, :] = 0.0
        for i in range(bsz):
            for j in range(odim):
                z[i, j] += b[j]
    return z


def head_forward(cnp.ndarray[f64, ndim=2] x,
                 cnp.ndarray[f64, ndim=2] w,
                 cnp.ndarray[f64, ndim=1] b):
    """Like affine_forward but row-stable: each output cell is an
    independent dot product in fixed k order, so appending rows to w leaves
    existing outputs bit-identical."""
    cdef Py_ssize_t bsz = x.shape[0]
    cdef Py_ssize_t idim = x.shape[1]
    cdef Py_ssize_t odim = w.shape[0]
    cdef cnp.ndarray[f64, ndim=2] z = np.empty((bsz, odim), dtype=np.float64)
    cdef Py_ssize_t i, j, k
    cdef double acc
    for i in range(bsz):
        for j in range(odim):
            acc = 0.0
            for k in range(idim):
                acc += x[i, k] * w[j, k]
            z[i, j] = acc + b[j]
    return z


def act_forward(cnp.ndarray[f64, ndim=2] z, int kind):
    cdef cnp.ndarray[f64, ndim=2] a = np.empty_like(z)
    cdef Py_ssize_t i, j
    cdef double v
    if kind == TANH:
        for i in range(z.shape[0]):
            for j in range(z.shape[1]):
                a[i, j] = tanh(z[i, j])
    elif kind == RELU:
        for i in range(z.shape[0]):
            for j in range(z.shape[1]):
                v = z[i, j]
                a[i, j] = v if v > 0.0 else 0.0
    elif kind == IDENTITY:
        a[:, :] = z
    else:
        raise ValueError(f"unknown activation kind {kind}")
    return a


def act_backward(cnp.ndarray[f64, ndim=2] a,
                 cnp.ndarray[f64, ndim=2] da, int kind):
    """Gradient through the nonlinearity, using post-activation values a."""
    cdef cnp.ndarray[f64, ndim=2] dz = np.empty_like(a)
    cdef Py_ssize_t i, j
    cdef double av
    if kind == TANH:
        for i in range(a.shape[0]):
            for j in range(a.shape[1]):
                av = a[i, j]
                dz[i, j] = da[i, j] * (1.0 - av * av)
    elif kind == RELU:
        for i in range(a.shape[0]):
            for j in range(a.shape[1]):
                dz[i, j] = da[i, j] if a[i, j] > 0.0 else 0.0
    elif kind == IDENTITY:
        dz[:, :] = da
    else:
        raise ValueError(f"unknown activation kind {kind}")
    return dz


def affine_backward(cnp.ndarray[f64, ndim=2] x,
                    cnp.ndarray[f64, ndim=2] w,
                    cnp.ndarray[f64, ndim=2] dz):
    """Returns (dx, dw, db) for z = x @ w.T + b."""
    cdef int bsz = x.shape[0]
    cdef int idim = x.shape[1]
    cdef int odim = w.shape[0]
    cdef cnp.ndarray[f64, ndim=2] dw = np.zeros((odim, idim), dtype=np.float64)
    cdef cnp.ndarray[f64, ndim=1] db = np.zeros(odim, dtype=np.float64)
    cdef cnp.ndarray[f64, ndim=2] dx = np.zeros((bsz, idim), dtype=np.float64)
    cdef Py_ssize_t i, j
    if bsz > 0 and odim > 0:
        if idim > 0:
            # dW^f (I x O) = X^f . dZ  -> dW C-order [O,I]
            _gemm(b'N', b'T', idim, odim, bsz,
                  &x[0, 0], idim, &dz[0, 0], odim, &dw[0, 0], idim)
            # dX^f (I x B) = W^f . dZ^f -> dX C-order [B,I]
            _gemm(b'N', b'N', idim, bsz, odim,
                  &w[0, 0], idim, &dz[0, 0], odim, &dx[0, 0], idim)
        for i in range(bsz):
            for j in range(odim):
                db[j] += dz[i, j]
    return dx, dw, db


def sigmoid(cnp.ndarray[f64, ndim=2] z):
    cdef cnp.ndarray[f64, ndim=2] out = np.empty_like(z)
    cdef Py_ssize_t i, j
    cdef double v, e
    for i in range(z.shape[0]):
        for j in range(z.shape[1]):
            v = z[i, j]
            if v >= 0.0:
                out[i, j] = 1.0 / (1.0 + exp(-v))
            else:
                e = exp(v)
                out[i, j] = e / (1.0 + e)
    return out


def bce_soft(cnp.ndarray[f64, ndim=2] logits,
             cnp.ndarray[f64, ndim=2] targets):
    """Mean sigmoid BCE against soft targets; returns (loss, dlogits)."""
    cdef Py_ssize_t bsz = logits.shape[0]
    cdef Py_ssize_t c = logits.shape[1]
    cdef cnp.ndarray[f64, ndim=2] dlogits = np.empty_like(logits)
    cdef double total = 0.0
    cdef double inv = 1.0 / (bsz * c)
    cdef Py_ssize_t i, j
    cdef double z, t, sp, sig, e
    for i in range(bsz):
        for j in range(c):
            z = logits[i, j]
            t = targets[i, j]
            sp = (z if z > 0.0 else 0.0) + log1p(exp(-fabs(z)))
            total += sp - t * z
            if z >= 0.0:
                sig = 1.0 / (1.0 + exp(-z))
            else:
                e = exp(z)
                sig = e / (1.0 + e)
            dlogits[i, j] = (sig - t) * inv
    return total * inv, dlogits


def adam_step(cnp.ndarray[f64, ndim=1] p,
              cnp.ndarray[f64, ndim=1] g,
              cnp.ndarray[f64, ndim=1] m,
              cnp.ndarray[f64, ndim=1] v,
              long t, double lr, double beta1, double beta2, double eps,
              scale=None):
    """One Adam update, in place on p, m, v.  t is the 1-based step count
    after this update; scale is an optional per-coordinate lr multiplier."""
    cdef Py_ssize_t n = p.shape[0]
    cdef double c1 = 1.0 - beta1 ** t
    cdef double c2 = 1.0 - beta2 ** t
    cdef double mhat, vhat, upd
    cdef Py_ssize_t i
    cdef cnp.ndarray[f64, ndim=1] sc
    if scale is None:
        for i in range(n):
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
            mhat = m[i] / c1
            vhat = v[i] / c2
            p[i] -= lr * mhat / (sqrt(vhat) + eps)
    else:
        sc = scale
        for i in range(n):
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
            mhat = m[i] / c1
            vhat = v[i] / c2
            p[i] -= sc[i] * lr * mhat / (sqrt(vhat) + eps)


def sgd_step(cnp.ndarray[f64, ndim=1] p,
             cnp.ndarray[f64, ndim=1] g,
             double lr, scale=None):
    """One SGD update, in place on p."""
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t i
    cdef cnp.ndarray[f64, ndim=1] sc
    if scale is None:
        for i in range(n):
            p[i] -= lr * g[i]
    else:
        sc = scale
        for i in range(n):
            p[i] -= sc[i] * lr * g[i]


def ewc_penalty_grad(cnp.ndarray[f64, ndim=1] theta,
                     cnp.ndarray[f64, ndim=1] anchor,
                     cnp.ndarray[f64, ndim=1] fisher,
                     double lam,
                     cnp.ndarray[f64, ndim=1] out):
    """Accumulates lam * fisher * (theta - anchor) into out; returns the
    penalty value (lam/2) * sum(fisher * (theta - anchor)^2)."""
    cdef Py_ssize_t n = theta.shape[0]
    cdef Py_ssize_t i
    cdef double d, acc = 0.0
    for i in range(n):
        d = theta[i] - anchor[i]
        out[i] += lam * fisher[i] * d
        acc += fisher[i] * d * d
    return 0.5 * lam * acc
