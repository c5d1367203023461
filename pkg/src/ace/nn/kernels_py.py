"""Pure-numpy implementations of the kernel surface in ``_kernels``.

Kept behaviourally identical to the compiled versions so the two can be
swapped at import time and cross-checked in tests.
"""

import numpy as np


def dense_forward(x, w, b, relu):
    """Return y = x @ w.T + b, with ReLU applied when ``relu`` is true."""
    y = x @ w.T
    y += b
    if relu:
        np.maximum(y, 0, out=y)
    return y


def dense_backward(x, y, w, dy, relu, dw, db):
    """Backprop one dense layer; accumulates into dw and db, returns dx."""
    if relu:
        dpre = np.where(y > 0, dy, 0)
    else:
        dpre = dy
    db += dpre.sum(axis=0)
    dw += dpre.T @ x
    return dpre @ w


def adam_step(p, g, m, v, lr, beta1, beta2, eps, weight_decay, t):
    """One Adam update, in place, with decoupled weight decay."""
    if weight_decay != 0:
        p *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * np.square(g)
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def soft_update(target, online, theta):
    """target = (1 - theta) * target + theta * online, in place."""
    target *= 1.0 - theta
    target += theta * online
