"""Central finite-difference gradient verification.

The checker is deliberately independent of the backward pass it validates:
it re-runs the forward closure at perturbed inputs and compares the slope
against the analytic gradient, element by element (optionally on a random
subsample for large tensors).
"""

from __future__ import annotations

import numpy as np

FD_EPS = 1e-5
REL_FLOOR = 1e-8
# components this small cannot be resolved by central differences at FD_EPS
# (cancellation noise ~ machine_eps * |f| / eps); treated as matching
FD_ATOL = 1e-5


def relative_error(analytic: float, numeric: float) -> float:
    if abs(analytic) < FD_ATOL and abs(numeric) < FD_ATOL:
        return 0.0
    denom = max(abs(analytic), abs(numeric), REL_FLOOR)
    return abs(analytic - numeric) / denom


def fd_gradient(f, x: np.ndarray, eps: float = FD_EPS) -> np.ndarray:
    """Dense central-difference gradient of scalar-valued f at x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def max_rel_error(f, x: np.ndarray, analytic: np.ndarray,
                  eps: float = FD_EPS, sample: int | None = None,
                  rng: np.random.Generator | None = None):
    """Max relative error between analytic grad and finite differences.

    With ``sample`` set, only that many randomly chosen components are
    perturbed (keeps whole-model checks fast). Returns (max_err, worst_index).
    """
    flat = x.reshape(-1)
    aflat = analytic.reshape(-1)
    idxs = np.arange(flat.size)
    if sample is not None and sample < flat.size:
        rng = rng or np.random.default_rng(0)
        idxs = rng.choice(flat.size, size=sample, replace=False)
    worst, worst_i = 0.0, -1
    for i in idxs:
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        num = (fp - fm) / (2.0 * eps)
        err = relative_error(aflat[i], num)
        if err > worst:
            worst, worst_i = err, int(i)
    return worst, np.unravel_index(worst_i, x.shape) if worst_i >= 0 else None
