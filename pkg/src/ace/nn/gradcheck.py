"""Central finite-difference verification of analytic gradients.

The caller provides a closure computing a scalar loss from the current
store values (optionally also running the analytic backward).  Every
parameter element is perturbed by +-eps in turn; run this on small 64-bit
models only.
"""

from typing import Callable, Dict, Tuple

import numpy as np

from ace.nn.params import ParamStore


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - n| / max(1, |a| + |n|), elementwise; absolute near zero."""
    scale = np.maximum(1.0, np.abs(analytic) + np.abs(numeric))
    return np.abs(analytic - numeric) / scale

def check_gradients(
    loss_fn: Callable[[], float],
    backward_fn: Callable[[], float],
    store: ParamStore,
    eps: float = 1e-5,
) -> Tuple[float, Dict[str, float]]:
    """Compare analytic gradients against central differences.

    ``backward_fn`` runs forward+backward and leaves gradients in the store;
    ``loss_fn`` runs forward only.  Returns (max relative error, per-tensor
    max errors).
    """
    if store.dtype != np.float64:
        raise ValueError("gradient checks require a float64 store")
    store.zero_grad()
    backward_fn()
    analytic = {name: p.grad.copy() for name, p in store.items()}
    store.zero_grad()
    per_tensor: Dict[str, float] = {}
    worst = 0.0
    for name, p in store.items():
        flat = p.value.ravel()
        fd = np.zeros(flat.shape[0])
        for i in range(flat.shape[0]):
            keep = flat[i]
            flat[i] = keep + eps
            f_plus = loss_fn()
            flat[i] = keep - eps
            f_minus = loss_fn()
            flat[i] = keep
            fd[i] = (f_plus - f_minus) / (2.0 * eps)
        err = relative_error(analytic[name].ravel(), fd)
        per_tensor[name] = float(err.max()) if err.size else 0.0
        worst = max(worst, per_tensor[name])
    return worst, per_tensor
