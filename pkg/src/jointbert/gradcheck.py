"""Central finite-difference gradient checks for scalar functions of tensors."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``; zero when both vanish."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if denom < 1e-300:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, step: float = 1e-5,
                 coords: Sequence[tuple[int, ...]] | None = None) -> np.ndarray:
    """Central differences of ``fn()`` w.r.t. ``x`` at ``coords`` (all by default)."""
    flat = x.data.reshape(-1)
    if coords is None:
        idx = np.arange(flat.size)
    else:
        idx = np.array([np.ravel_multi_index(c, x.shape) for c in coords], dtype=np.int64)
    out = np.empty(len(idx))
    for k, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + step
        plus = fn().item()
        flat[i] = orig - step
        minus = fn().item()
        flat[i] = orig
        out[k] = (plus - minus) / (2 * step)
    return out


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-5,
                    max_coords: int | None = None, rng: np.random.Generator | None = None) -> dict[int, float]:
    """Compare backprop with finite differences for each tensor in ``inputs``.

    ``fn`` must rebuild the graph from the current ``.data`` of ``inputs``.
    When ``max_coords`` is set, that many randomly chosen entries per input
    are checked. Returns the relative error per input position.
    """
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    fn().backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]
    errors = {}
    for pos, x in enumerate(inputs):
        coords = None
        if max_coords is not None and x.size > max_coords:
            rng = rng or np.random.default_rng(0)
            flat = rng.choice(x.size, size=max_coords, replace=False)
            coords = [np.unravel_index(i, x.shape) for i in flat]
        num = numeric_grad(fn, x, step, coords)
        ana = analytic[pos].reshape(-1) if coords is None else np.array([analytic[pos][c] for c in coords])
        errors[pos] = relative_error(ana, num)
    return errors
