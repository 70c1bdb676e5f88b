"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ContractError
from .tensor import Tensor, no_grad


def check_gradient(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences.

    ``f`` maps a tensor shaped like ``x`` to a scalar tensor.  The error per
    coordinate is ``|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)``.
    """
    base = np.array(x.data, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    out = f(leaf)
    if not isinstance(out, Tensor) or out.size != 1:
        shape = getattr(out, "shape", type(out).__name__)
        raise ContractError(f"check_gradient needs a scalar-valued function, got output shape {shape}")
    out.backward()
    g_ad = np.zeros_like(base) if leaf.grad is None else leaf.grad

    g_fd = np.empty_like(base)
    flat = base.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(f(Tensor(base.copy())).data)
            flat[i] = orig - step
            lo = float(f(Tensor(base.copy())).data)
            flat[i] = orig
            g_fd.reshape(-1)[i] = (hi - lo) / (2.0 * step)

    denom = np.maximum(1.0, np.maximum(np.abs(g_ad), np.abs(g_fd)))
    return float(np.max(np.abs(g_ad - g_fd) / denom)) if base.size else 0.0
