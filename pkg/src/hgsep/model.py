"""Stacked hourglass network producing one set of source masks per module.

Layout of one hourglass module (``T`` trunk channels, ``C`` sources)::

    e_l  = relu(conv3x3(f_l))              l = 0..depth-1, f_0 = module input
    s_l  = relu(conv3x3(e_l))              skip branch on the pre-pool features
    f_l+1 = maxpool2x2(e_l)
    b    = relu(conv3x3(f_depth))          bottleneck, H/16 x W/16 for depth 4
    u_l  = upsample2x(relu(conv3x3(u_l+1))) + s_l     (u_depth = b)
    h    = relu(conv1x1(relu(conv3x3(u_0))))
    masks  = conv1x1(h) -> C planes, no activation
    merged = conv1x1(masks) + conv1x1(h) + module input

There is no normalisation layer anywhere. Masks are left unbounded; inference
clamps them at zero.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .container import read_container, write_container
from .tensor import ShapeError, Tensor, add, conv2d, maxpool2x2, relu, upsample_nearest2x

Params = dict  # name -> Tensor, insertion-ordered


@dataclass(frozen=True)
class NetworkConfig:
    num_stacks: int = 4
    num_sources: int = 2
    trunk_channels: int = 256
    stem_channels: tuple = (64, 128, 128, 128, 256)
    depth: int = 4
    input_shape: tuple = (512, 64)

    def __post_init__(self):
        object.__setattr__(self, "stem_channels", tuple(int(c) for c in self.stem_channels))
        object.__setattr__(self, "input_shape", tuple(int(c) for c in self.input_shape))
        if self.num_stacks < 1 or self.num_sources < 1:
            raise ValueError("need at least one stack and one source")
        if self.stem_channels[-1] != self.trunk_channels:
            raise ValueError(f"last stem width {self.stem_channels[-1]} must equal trunk width {self.trunk_channels}")
        step = 2 ** self.depth
        h, w = self.input_shape
        if h % step or w % step:
            raise ValueError(f"input {self.input_shape} is not divisible by 2**depth = {step}")

    @classmethod
    def scaled(cls, channels: int, **kw) -> "NetworkConfig":
        """Same topology with every width scaled by ``channels / 256``."""
        stem = tuple(max(1, c * channels // 256) for c in (64, 128, 128, 128, 256))
        return cls(trunk_channels=channels, stem_channels=stem, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stem_channels"] = list(self.stem_channels)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)


def _conv_layout(config: NetworkConfig) -> list[tuple[str, int, int, int]]:
    """(prefix, in_channels, out_channels, kernel) for every convolution, in forward order."""
    layers = []
    cin = 1
    for i, cout in enumerate(config.stem_channels):
        layers.append((f"stem.{i}", cin, cout, 7 if i == 0 else 3))
        cin = cout
    t, c = config.trunk_channels, config.num_sources
    for j in range(config.num_stacks):
        p = f"stack{j}"
        for lvl in range(config.depth):
            layers.append((f"{p}.down{lvl}", t, t, 3))
            layers.append((f"{p}.skip{lvl}", t, t, 3))
        layers.append((f"{p}.bottleneck", t, t, 3))
        for lvl in reversed(range(config.depth)):
            layers.append((f"{p}.up{lvl}", t, t, 3))
        layers += [
            (f"{p}.head.conv3", t, t, 3),
            (f"{p}.head.conv1", t, t, 1),
            (f"{p}.head.mask", t, c, 1),
            (f"{p}.merge.masks", c, t, 1),
            (f"{p}.merge.features", t, t, 1),
        ]
    return layers


def param_shapes(config: NetworkConfig) -> dict[str, tuple]:
    shapes = {}
    for prefix, cin, cout, k in _conv_layout(config):
        shapes[f"{prefix}.weight"] = (cout, cin, k, k)
        shapes[f"{prefix}.bias"] = (cout,)
    return shapes


def param_count(config: NetworkConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


def init_params(config: NetworkConfig, seed: int = 0, dtype=np.float32) -> Params:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:]))
            value = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        else:
            value = np.zeros(shape)
        params[name] = Tensor(value.astype(dtype), requires_grad=True, name=name)
    return params


def identity_params(config: NetworkConfig, seed: int = 0, dtype=np.float32) -> Params:
    """Parameters whose every mask is exactly 1 (debug pass-through network)."""
    params = init_params(config, seed, dtype)
    for j in range(config.num_stacks):
        w = f"stack{j}.head.mask.weight"
        b = f"stack{j}.head.mask.bias"
        params[w] = Tensor(np.zeros_like(params[w].data), requires_grad=True, name=w)
        params[b] = Tensor(np.ones_like(params[b].data), requires_grad=True, name=b)
    return params


def stack_params(params: Params, j: int) -> Params:
    prefix = f"stack{j}."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def _conv(p: Params, name: str, x: Tensor) -> Tensor:
    return conv2d(x, p[f"{name}.weight"], p[f"{name}.bias"])


def stem_forward(params: Params, x: Tensor) -> Tensor:
    """7x7 then four 3x3 convolutions, each followed by relu, no pooling."""
    if x.data.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"stem expects a (B, 1, H, W) spectrogram batch, got {x.shape}")
    i = 0
    while f"stem.{i}.weight" in params:
        x = relu(_conv(params, f"stem.{i}", x))
        i += 1
    return x


def hourglass_forward(sp: Params, features: Tensor, depth: int = 4,
                      trace: Optional[list] = None) -> tuple[Tensor, Tensor]:
    """One hourglass module. ``sp`` holds the module's parameters without the stack prefix.

    Returns ``(masks, merged)``. When ``trace`` is a list, the spatial shape of
    every encoder output (after pooling) is appended to it.
    """
    h, w = features.shape[2:]
    if h % 2 ** depth or w % 2 ** depth:
        raise ShapeError(f"hourglass input {features.shape} is not divisible by {2 ** depth}")
    skips = []
    f = features
    for lvl in range(depth):
        e = relu(_conv(sp, f"down{lvl}", f))
        skips.append(relu(_conv(sp, f"skip{lvl}", e)))
        f = maxpool2x2(e)
        if trace is not None:
            trace.append(f.shape[2:])
    f = relu(_conv(sp, "bottleneck", f))
    for lvl in reversed(range(depth)):
        f = add(upsample_nearest2x(relu(_conv(sp, f"up{lvl}", f))), skips[lvl])
    head = relu(_conv(sp, "head.conv1", relu(_conv(sp, "head.conv3", f))))
    masks = _conv(sp, "head.mask", head)
    merged = add(add(_conv(sp, "merge.masks", masks), _conv(sp, "merge.features", head)), features)
    return masks, merged


def forward(params: Params, x: Tensor, config: NetworkConfig) -> list[Tensor]:
    """All ``num_stacks`` mask sets, each (B, C, H, W); the last one is used for inference."""
    if x.data.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"network expects a (B, 1, H, W) batch, got {x.shape}")
    f = stem_forward(params, x)
    mask_sets = []
    for j in range(config.num_stacks):
        masks, f = hourglass_forward(stack_params(params, j), f, config.depth)
        mask_sets.append(masks)
    return mask_sets


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    params: Params
    config: NetworkConfig
    step: int = 0
    meta: dict = field(default_factory=dict)
    optimizer: Optional[dict] = None  # {"t": int, "m": {name: array}, "v": {name: array}}


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    tensors = {f"param/{k}": v.data for k, v in ckpt.params.items()}
    meta = {"kind": "checkpoint", "network": ckpt.config.to_dict(), "step": int(ckpt.step), "extra": ckpt.meta}
    if ckpt.optimizer is not None:
        meta["optimizer_t"] = int(ckpt.optimizer["t"])
        for k, arr in ckpt.optimizer["m"].items():
            tensors[f"adam_m/{k}"] = arr
        for k, arr in ckpt.optimizer["v"].items():
            tensors[f"adam_v/{k}"] = arr
    write_container(path, tensors, meta)


def load_checkpoint(path) -> Checkpoint:
    meta, tensors = read_container(path)
    if meta.get("kind") != "checkpoint":
        raise ValueError(f"{path}: not a model checkpoint")
    config = NetworkConfig.from_dict(meta["network"])
    params = {k[6:]: Tensor(v, requires_grad=True, name=k[6:]) for k, v in tensors.items() if k.startswith("param/")}
    expected = param_shapes(config)
    if {k: v.shape for k, v in params.items()} != expected:
        raise ValueError(f"{path}: parameters do not match the stored network config")
    params = {k: params[k] for k in expected}
    optimizer = None
    if "optimizer_t" in meta:
        optimizer = {
            "t": meta["optimizer_t"],
            "m": {k[7:]: v for k, v in tensors.items() if k.startswith("adam_m/")},
            "v": {k[7:]: v for k, v in tensors.items() if k.startswith("adam_v/")},
        }
    return Checkpoint(params, config, meta["step"], meta.get("extra", {}), optimizer)
