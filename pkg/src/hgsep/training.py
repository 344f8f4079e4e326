"""Intermediate-supervision L1 loss, excerpt sampling, Adam and the training loop."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .model import Checkpoint, NetworkConfig, Params, forward, init_params, save_checkpoint
from .tensor import GradTape, Tensor, add, l1_sum, mul_elementwise

logger = logging.getLogger(__name__)


class NumericError(RuntimeError):
    """Training hit a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    lr_late: float = 2e-5
    decay_point: float = 0.8
    batch_size: int = 4
    iterations: int = 15000
    seed: int = 0
    checkpoint_every: int = 1000
    excerpt_frames: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0 < self.decay_point < 1:
            raise ValueError(f"decay_point must lie in (0, 1), got {self.decay_point}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


def lr_at(step: int, config: TrainConfig) -> float:
    """Step schedule: lr0 for the first decay_point of the run, lr_late afterwards."""
    return config.lr0 if step < config.decay_point * config.iterations else config.lr_late


# ---------------------------------------------------------------------------
# batches


@dataclass
class Excerpt:
    mixture: np.ndarray  # (1, F, W)
    targets: np.ndarray  # (C, F, W)
    clip_id: str
    start: int


def _window(mag: np.ndarray, start: int, width: int) -> np.ndarray:
    piece = mag[:, start:start + width]
    if piece.shape[1] < width:
        piece = np.pad(piece, ((0, 0), (0, width - piece.shape[1])))
    return piece


def sample_batch(dataset: Sequence, rng: np.random.Generator, batch_size: int, width: int = 64) -> list[Excerpt]:
    """Uniform clip, then uniform start frame in [0, T - width]; short clips are zero-padded on the right.

    Dataset items need ``clip_id``, ``mixture`` and ``sources`` (MagSpec-like,
    with a ``magnitude`` array).
    """
    if len(dataset) == 0:
        raise ValueError("cannot sample from an empty dataset")
    out = []
    for _ in range(batch_size):
        clip = dataset[int(rng.integers(len(dataset)))]
        t = clip.mixture.magnitude.shape[1]
        start = int(rng.integers(max(t - width, 0) + 1))
        mix = _window(clip.mixture.magnitude, start, width)[None]
        targets = np.stack([_window(s.magnitude, start, width) for s in clip.sources])
        out.append(Excerpt(mix, targets, clip.clip_id, start))
    return out


def stack_batch(excerpts: Sequence[Excerpt], dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([e.mixture for e in excerpts]).astype(dtype)
    y = np.stack([e.targets for e in excerpts]).astype(dtype)
    return x, y


# ---------------------------------------------------------------------------
# loss


def loss(mask_sets: Sequence[Tensor], mixture: np.ndarray, targets: np.ndarray) -> tuple[Tensor, list[Tensor]]:
    """Sum over modules, sources and batch items of ||Y_i - X * M_ij||_1.

    Returns the total and the per-module components.
    """
    n_src = targets.shape[1]
    x = Tensor(np.broadcast_to(mixture, targets.shape).copy())
    y = Tensor(targets)
    if mask_sets[0].shape[1] != n_src:
        raise ValueError(f"{mask_sets[0].shape[1]} mask planes for {n_src} targets")
    parts = [l1_sum(y, mul_elementwise(x, m)) for m in mask_sets]
    total = parts[0]
    for p in parts[1:]:
        total = add(total, p)
    return total, parts


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        return cls(int(d["t"]), dict(d["m"]), dict(d["v"]))


def adam_step(params: Params, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> tuple[Params, AdamState]:
    """One bias-corrected Adam update. Returns new parameter tensors and state."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {params[name].shape}")
    t = state.t + 1
    c1 = 1 - beta1 ** t
    c2 = 1 - beta2 ** t
    new_params, m_new, v_new = dict(params), {}, {}
    for name, g in grads.items():
        p = params[name]
        m = beta1 * state.m.get(name, 0) + (1 - beta1) * g
        v = beta2 * state.v.get(name, 0) + (1 - beta2) * g * g
        m = np.asarray(m, dtype=p.dtype)
        v = np.asarray(v, dtype=p.dtype)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_params[name] = Tensor((p.data - update).astype(p.dtype), requires_grad=True, name=name)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(t, m_new, v_new)


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    params: Params
    optimizer: AdamState
    history: list  # (step, lr, total, [per-module])
    step: int


LOG_FIELDS = ("step", "lr", "total_loss")


def train(dataset: Sequence, net: NetworkConfig, cfg: TrainConfig, out_dir: Optional[os.PathLike] = None,
          params: Optional[Params] = None, optimizer: Optional[AdamState] = None, start_step: int = 0,
          meta: Optional[dict] = None, progress: Optional[Callable[[int, float], None]] = None) -> TrainResult:
    """Run ``cfg.iterations - start_step`` optimisation steps.

    With ``out_dir`` the loss log is appended to ``loss.csv`` and checkpoints
    are written every ``checkpoint_every`` steps and at the end. A non-finite
    loss writes ``last_good.ckpt`` and raises :class:`NumericError`.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    params = params if params is not None else init_params(net, cfg.seed)
    optimizer = optimizer or AdamState()
    # batch draws depend only on (seed, step) so a resumed run sees the same batches
    out = Path(out_dir) if out_dir is not None else None
    log_fh = writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "loss.csv"
        fresh = not log_path.exists() or start_step == 0
        kept = [] if fresh else _log_rows_before(log_path, start_step)
        log_fh = open(log_path, "w", newline="")
        writer = csv.writer(log_fh)
        writer.writerow([*LOG_FIELDS, *(f"loss_module_{j + 1}" for j in range(net.num_stacks))])
        writer.writerows(kept)

    def checkpoint(name: str, step: int, state=None) -> None:
        p, o = state or (params, optimizer)
        if out is not None:
            save_checkpoint(out / name, Checkpoint(p, net, step, meta or {}, o.to_dict()))

    history = []
    names = list(params)
    step = start_step
    good = (params, optimizer, start_step)  # newest state whose loss was finite
    try:
        for step in range(start_step, cfg.iterations):
            rng = np.random.default_rng([cfg.seed, step])
            x, y = stack_batch(sample_batch(dataset, rng, cfg.batch_size, cfg.excerpt_frames))
            with GradTape() as tape:
                mask_sets = forward(params, Tensor(x), net)
                total, parts = loss(mask_sets, x, y)
            value = float(total.data)
            if not math.isfinite(value):
                checkpoint("last_good.ckpt", good[2], good[:2])
                raise NumericError(f"non-finite loss at step {step}")
            good = (params, optimizer, step)
            grads = dict(zip(names, tape.gradient(total, [params[n] for n in names])))
            lr = lr_at(step, cfg)
            try:
                params, optimizer = adam_step(params, grads, optimizer, lr, cfg.beta1, cfg.beta2, cfg.eps)
            except NumericError as err:
                checkpoint("last_good.ckpt", step)
                raise NumericError(f"step {step}: {err}") from err
            row = (step, lr, value, [float(p.data) for p in parts])
            history.append(row)
            if writer is not None:
                writer.writerow([step, repr(lr), repr(value), *(repr(v) for v in row[3])])
            if progress is not None:
                progress(step, value)
            if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                checkpoint(f"step_{step + 1:07d}.ckpt", step + 1)
        step = cfg.iterations
        checkpoint("final.ckpt", step)
    finally:
        if log_fh is not None:
            log_fh.close()
    return TrainResult(params, optimizer, history, step)


def _log_rows_before(path, step: int) -> list[list[str]]:
    """Rows logged before ``step``; later ones belong to a run that is being replayed."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [r for r in rows if r and int(r[0]) < step]


def read_loss_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]

