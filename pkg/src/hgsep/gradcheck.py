"""Central finite-difference checks for taped gradients (64-bit only)."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import GradTape, Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute deviation, scaled by the larger gradient magnitude.

    Element-wise ratios blow up on near-zero components, so the error is
    normalised by the tensor-wide max instead.
    """
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def numeric_gradient(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5,
                     indices: Optional[Sequence[tuple]] = None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``arr`` (perturbed in place, then restored).

    With ``indices`` only those coordinates are computed; the rest stay zero.
    """
    grad = np.zeros_like(arr)
    it = indices if indices is not None else np.ndindex(arr.shape)
    for idx in it:
        old = arr[idx]
        arr[idx] = old + h
        fp = f()
        arr[idx] = old - h
        fm = f()
        arr[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5,
                    max_coords: Optional[int] = None, rng: Optional[np.random.Generator] = None,
                    cotangent: Optional[np.ndarray] = None) -> float:
    """Compare taped gradients of ``loss_fn()`` against finite differences.

    ``loss_fn`` must rebuild the graph from the current ``tensor.data`` on each
    call. For non-scalar outputs pass ``cotangent``; the checked scalar is then
    ``sum(cotangent * output)``. With ``max_coords`` each tensor is probed at
    that many random coordinates. Returns the worst :func:`relative_error`.
    """
    for t in tensors:
        if t.dtype != np.float64:
            raise TypeError(f"gradient checks need float64 tensors, got {t.dtype}")
    with GradTape() as tape:
        out = loss_fn()
    analytic = tape.gradient(out, tensors, seed=cotangent)

    def f() -> float:
        value = loss_fn().data
        return float(value if cotangent is None else (value * cotangent).sum())

    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t, ga in zip(tensors, analytic):
        if max_coords is not None and t.size > max_coords:
            flat = rng.choice(t.size, size=max_coords, replace=False)
            idx = [np.unravel_index(i, t.shape) for i in flat]
            gn = numeric_gradient(f, t.data, h, idx)
            sel = tuple(np.array(idx).T)
            worst = max(worst, relative_error(ga[sel], gn[sel]))
        else:
            worst = max(worst, relative_error(ga, numeric_gradient(f, t.data, h)))
    return worst


def check_directional(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-6,
                      n_directions: int = 3, rng: Optional[np.random.Generator] = None) -> float:
    """Directional-derivative check over all coordinates at once.

    For random unit directions v, compares <grad, v> with the central
    difference of the loss along v. Returns the worst relative error.
    """
    rng = rng or np.random.default_rng(0)
    with GradTape() as tape:
        loss = loss_fn()
    analytic = tape.gradient(loss, tensors)
    originals = [t.data.copy() for t in tensors]
    worst = 0.0
    for _ in range(n_directions):
        dirs = [rng.standard_normal(t.shape) for t in tensors]
        norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]
        predicted = sum(float((g * d).sum()) for g, d in zip(analytic, dirs))
        values = []
        for sign in (1.0, -1.0):
            for t, o, d in zip(tensors, originals, dirs):
                t.data[...] = o + sign * h * d
            values.append(float(loss_fn().data))
        for t, o in zip(tensors, originals):
            t.data[...] = o
        numeric = (values[0] - values[1]) / (2 * h)
        worst = max(worst, abs(predicted - numeric) / max(abs(predicted), abs(numeric), 1e-12))
    return worst
