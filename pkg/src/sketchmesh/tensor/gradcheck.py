"""Central finite-difference gradient checking used across the test suite."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Tensor, grad


def numeric_grad(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued closure w.r.t. param."""
    base = param.data.copy()
    out = np.zeros_like(base)
    flat = out.reshape(-1)
    for i in range(base.size):
        param.data = base.copy()
        param.data.reshape(-1)[i] = base.reshape(-1)[i] + h
        hi = fn().item()
        param.data = base.copy()
        param.data.reshape(-1)[i] = base.reshape(-1)[i] - h
        lo = fn().item()
        flat[i] = (hi - lo) / (2.0 * h)
    param.data = base
    return out


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor],
                    h: float = 1e-5, floor: float = 1e-6) -> float:
    """Compare analytic gradients of fn() against finite differences.

    Returns the worst relative error over all parameters. ``fn`` must build a
    fresh graph on every call.
    """
    out = fn()
    analytic = grad(out, params)
    worst = 0.0
    for p, a in zip(params, analytic):
        a_arr = np.zeros_like(p.data) if a is None else a.data
        n_arr = numeric_grad(fn, p, h=h)
        worst = max(worst, max_rel_error(a_arr, n_arr, floor=floor))
    return worst
