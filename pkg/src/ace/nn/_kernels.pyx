# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Fused dense-layer and optimizer kernels.

All matrices are C-contiguous; the GEMM calls below exploit the fact that
a C-contiguous (rows, cols) array is a Fortran-contiguous (cols, rows)
array, so every product is expressed on transposed operands.  Weights are
stored (out_features, in_features), matching y = x @ w.T + b.
"""

import numpy as np

from libc.math cimport sqrt
from scipy.linalg.cython_blas cimport dgemm, sgemm

ctypedef fused real:
    float
    double


cdef inline void _gemm(char ta, char tb, int m, int n, int k,
                       real* a, int lda, real* b, int ldb,
                       real beta, real* c, int ldc) noexcept nogil:
    cdef real one = 1.0
    if real is float:
        sgemm(&ta, &tb, &m, &n, &k, &one, a, &lda, b, &ldb, &beta, c, &ldc)
    else:
        dgemm(&ta, &tb, &m, &n, &k, &one, a, &lda, b, &ldb, &beta, c, &ldc)


def dense_forward(real[:, ::1] x, real[:, ::1] w, real[::1] b, bint relu):
    """Return y = x @ w.T + b, with ReLU applied when ``relu`` is true."""
    cdef int B = x.shape[0]
    cdef int I = x.shape[1]
    cdef int O = w.shape[0]
    if w.shape[1] != I or b.shape[0] != O:
        raise ValueError("dense_forward: shape mismatch")
    if real is float:
        out = np.empty((B, O), dtype=np.float32)
    else:
        out = np.empty((B, O), dtype=np.float64)
    if B == 0:
        return out
    cdef real[:, ::1] y = out
    cdef Py_ssize_t i, j
    cdef real v
    with nogil:
        # y.T (O, B) = w.T (I, O) ^T @ x.T (I, B), all in Fortran order.
        _gemm(c'T', c'N', O, B, I, &w[0, 0], I, &x[0, 0], I, 0.0, &y[0, 0], O)
        for i in range(B):
            for j in range(O):
                v = y[i, j] + b[j]
                if relu and v < 0:
                    v = 0
                y[i, j] = v
    return out


def dense_backward(real[:, ::1] x, real[:, ::1] y, real[:, ::1] w,
                   real[:, ::1] dy, bint relu,
                   real[:, ::1] dw, real[::1] db):
    """Backprop one dense layer; accumulates into dw and db, returns dx.

    ``y`` is the forward output (post-activation); units at exactly zero
    pass no gradient.
    """
    cdef int B = x.shape[0]
    cdef int I = x.shape[1]
    cdef int O = w.shape[0]
    if y.shape[0] != B or y.shape[1] != O or dy.shape[0] != B or dy.shape[1] != O:
        raise ValueError("dense_backward: shape mismatch")
    if dw.shape[0] != O or dw.shape[1] != I or db.shape[0] != O:
        raise ValueError("dense_backward: gradient shape mismatch")
    if real is float:
        dx_out = np.empty((B, I), dtype=np.float32)
        dpre_buf = np.empty((B, O), dtype=np.float32)
    else:
        dx_out = np.empty((B, I), dtype=np.float64)
        dpre_buf = np.empty((B, O), dtype=np.float64)
    if B == 0:
        return dx_out
    cdef real[:, ::1] dx = dx_out
    cdef real[:, ::1] dpre = dpre_buf
    cdef Py_ssize_t i, j
    cdef real v
    with nogil:
        for i in range(B):
            for j in range(O):
                v = dy[i, j]
                if relu and y[i, j] <= 0:
                    v = 0
                dpre[i, j] = v
                db[j] += v
        # dx.T (I, B) = w.T (I, O) @ dpre.T (O, B)
        _gemm(c'N', c'N', I, B, O, &w[0, 0], I, &dpre[0, 0], O, 0.0, &dx[0, 0], I)
        # dw.T (I, O) += x.T (I, B) @ dpre (B, O)
        _gemm(c'N', c'T', I, O, B, &x[0, 0], I, &dpre[0, 0], O, 1.0, &dw[0, 0], I)
    return dx_out


def adam_step(real[::1] p, real[::1] g, real[::1] m, real[::1] v,
              double lr, double beta1, double beta2, double eps,
              double weight_decay, long t):
    """One Adam update, in place, with decoupled weight decay."""
    cdef Py_ssize_t n = p.shape[0]
    if g.shape[0] != n or m.shape[0] != n or v.shape[0] != n:
        raise ValueError("adam_step: shape mismatch")
    cdef double bc1 = 1.0 - beta1 ** t
    cdef double bc2 = 1.0 - beta2 ** t
    cdef double decay = 1.0 - lr * weight_decay
    cdef double mi, vi
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            if weight_decay != 0:
                p[i] = <real> (p[i] * decay)
            mi = beta1 * m[i] + (1.0 - beta1) * g[i]
            vi = beta2 * v[i] + (1.0 - beta2) * (<double> g[i]) * g[i]
            m[i] = <real> mi
            v[i] = <real> vi
            p[i] = <real> (p[i] - lr * (mi / bc1) / (sqrt(vi / bc2) + eps))


def soft_update(real[::1] target, real[::1] online, double theta):
    """target = (1 - theta) * target + theta * online, in place."""
    cdef Py_ssize_t n = target.shape[0]
    if online.shape[0] != n:
        raise ValueError("soft_update: shape mismatch")
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            target[i] = <real> ((1.0 - theta) * target[i] + theta * online[i])
