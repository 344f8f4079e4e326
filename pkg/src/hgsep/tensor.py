"""Dense tensors and the small set of differentiable ops the hourglass network needs.

Gradients are reverse-mode and recorded on an explicit :class:`GradTape`::

    with GradTape() as tape:
        y = relu(conv2d(x, w, b))
        loss = l1_sum(y, target)
    dw, db = tape.gradient(loss, [w, b])

Only ops executed while a tape is active, and whose inputs require gradients,
are recorded. Arrays are NCHW for 4-D tensors.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """An operation received operands whose shapes violate its shape rule."""


class Tensor:
    """Immutable dense real array plus a ``requires_grad`` flag.

    ``data`` is never modified in place by any op in this module; optimizers
    build new tensors instead.
    """

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_state = threading.local()


def _active_tape() -> Optional["GradTape"]:
    stack = getattr(_state, "tapes", None)
    return stack[-1] if stack else None


class GradTape:
    """Ordered record of executed ops; replayed backwards by :meth:`gradient`."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], BackwardFn]] = []

    def __enter__(self) -> "GradTape":
        if not hasattr(_state, "tapes"):
            _state.tapes = []
        _state.tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.tapes.pop()

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: tuple, backward: BackwardFn) -> None:
        self._records.append((out, inputs, backward))

    def gradient(self, target: Tensor, sources: Sequence[Tensor], seed: Optional[np.ndarray] = None) -> list:
        """Return dtarget/dsource for each source, zero-filled where unreachable.

        ``seed`` defaults to ones (so ``target`` is normally a scalar loss).
        """
        grads: dict[int, np.ndarray] = {
            id(target): np.ones_like(target.data) if seed is None else np.asarray(seed, dtype=target.dtype)
        }
        wanted = {id(s) for s in sources}
        for out, inputs, backward in reversed(self._records):
            key = id(out)
            g = grads.get(key) if key in wanted else grads.pop(key, None)
            if g is None:
                continue
            for inp, gi in zip(inputs, backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                k = id(inp)
                grads[k] = grads[k] + gi if k in grads else gi
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def _emit(out_data: np.ndarray, inputs: tuple, backward: BackwardFn) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    tape = _active_tape()
    if needs and tape is not None:
        tape.record(out, inputs, backward)
    return out


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes differ, {a.shape} vs {b.shape}")


def _require_4d(op: str, t: Tensor) -> None:
    if t.data.ndim != 4:
        raise ShapeError(f"{op}: expected a 4-D (B, C, H, W) tensor, got shape {t.shape}")


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, kh: int, kw: int, h: int, w: int) -> np.ndarray:
    """Patch matrix of a padded NCHW array, shape (C*kh*kw, B*H*W).

    Rows are ordered (c, i, j) to match ``weight.reshape(Cout, -1)``; built
    from kh*kw slab copies rather than one gather through a 6-D view.
    """
    b, c = xp.shape[:2]
    cols = np.empty((c, kh, kw, b, h, w), dtype=xp.dtype)
    xt = xp.transpose(1, 0, 2, 3)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i:i + h, j:j + w]
    return cols.reshape(c * kh * kw, b * h * w)


def _col2im(dcols: np.ndarray, shape: tuple, kh: int, kw: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`, cropped back to the unpadded (B, C, H, W) shape."""
    b, c, h, w = shape
    ph, pw = kh // 2, kw // 2
    dcols = dcols.reshape(c, kh, kw, b, h, w)
    dxp = np.zeros((c, b, h + 2 * ph, w + 2 * pw), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + h, j:j + w] += dcols[:, i, j]
    return dxp[:, :, ph:ph + h, pw:pw + w].transpose(1, 0, 2, 3)


def _cbhw(a: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (C, B*H*W); free when B == 1."""
    b, c, h, w = a.shape
    return (a.reshape(c, h * w) if b == 1 else a.transpose(1, 0, 2, 3).reshape(c, b * h * w))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Stride-1, zero "same"-padded 2-D cross-correlation plus per-channel bias."""
    _require_4d("conv2d", x)
    if weight.data.ndim != 4:
        raise ShapeError(f"conv2d: weight must be (Cout, Cin, kh, kw), got {weight.shape}")
    cout, cin, kh, kw = weight.shape
    bsz, xc, h, w = x.shape
    if xc != cin:
        raise ShapeError(f"conv2d: input channels {xc} of input {x.shape} do not match weight {weight.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel must have odd size, got {weight.shape}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match weight {weight.shape}")

    ph, pw = kh // 2, kw // 2
    pointwise = kh == 1 and kw == 1
    if pointwise:
        xp = x.data
        cols = _cbhw(xp)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        cols = _im2col(xp, kh, kw, h, w)
    wmat = weight.data.reshape(cout, -1)
    out = wmat @ cols
    out += bias.data[:, None]
    out_data = out.reshape(cout, bsz, h, w).transpose(1, 0, 2, 3)
    del cols  # rebuilt from xp in backward; the patch matrix is kh*kw times larger

    def backward(g: np.ndarray):
        g2 = _cbhw(g)
        dw = None
        if weight.requires_grad:
            cols = _cbhw(xp) if pointwise else _im2col(xp, kh, kw, h, w)
            dw = (g2 @ cols.T).reshape(weight.shape)
        db = g2.sum(axis=1) if bias.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = wmat.T @ g2
            if pointwise:
                dx = dcols.reshape(cin, bsz, h, w).transpose(1, 0, 2, 3)
            else:
                dx = _col2im(dcols, (bsz, cin, h, w), kh, kw)
        return dx, dw, db

    return _emit(out_data, (x, weight, bias), backward)


# ---------------------------------------------------------------------------
# resampling


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2/stride-2 max pooling; ties resolve to the first element in row-major order."""
    _require_4d("maxpool2x2", x)
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2: spatial dims must be even, got {x.shape}")
    win = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g: np.ndarray):
        onehot = (np.arange(4) == idx[..., None]) * g[..., None]
        dx = onehot.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        return (dx.astype(g.dtype, copy=False),)

    return _emit(out, (x,), backward)


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Replicate every cell into a 2x2 block."""
    _require_4d("upsample_nearest2x", x)
    b, c, h, w = x.shape
    out = np.broadcast_to(x.data[:, :, :, None, :, None], (b, c, h, 2, w, 2)).reshape(b, c, 2 * h, 2 * w)

    def backward(g: np.ndarray):
        return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _emit(out, (x,), backward)


# ---------------------------------------------------------------------------
# elementwise


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, 0).astype(x.dtype, copy=False)
    return _emit(out, (x,), lambda g: (g * pos,))


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def mul_elementwise(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("mul_elementwise", a, b)

    def backward(g: np.ndarray):
        return (g * b.data if a.requires_grad else None, g * a.data if b.requires_grad else None)

    return _emit(a.data * b.data, (a, b), backward)


def l1_sum(a: Tensor, b: Tensor) -> Tensor:
    """Scalar sum of |a - b|; the subgradient at a == b is 0."""
    _require_same_shape("l1_sum", a, b)
    diff = a.data - b.data
    sign = np.sign(diff)
    out = np.asarray(np.abs(diff).sum(dtype=np.float64), dtype=a.dtype)

    def backward(g: np.ndarray):
        ga = sign * g
        return ga, -ga

    return _emit(out, (a, b), backward)
