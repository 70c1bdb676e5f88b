"""Tiny teacher/student networks with named feature taps.

A model is an ordered list of :class:`LayerSpec` entries plus a parameter
dictionary.  Any ``relu`` layer can carry a ``tap`` label; the forward pass
returns the logits together with the activations at every tap, in
declaration order.  Taps sit after the activation and before any pooling.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import functional as F
from .errors import ShapeError
from .tensor import DTYPES, Tensor, flatten, relu

LAYER_KINDS = ("linear", "conv", "relu", "maxpool", "flatten")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_size: int = 0
    out_size: int = 0
    kernel: int = 3
    tap: Optional[str] = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("linear", "conv") and (self.in_size < 1 or self.out_size < 1):
            raise ShapeError(f"{self.kind} layer needs positive sizes, got {self.in_size}->{self.out_size}")

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        """Per-sample output shape, raising on incompatible input."""
        if self.kind == "linear":
            if shape != (self.in_size,):
                raise ShapeError(f"linear expects ({self.in_size},) input, got {shape}")
            return (self.out_size,)
        if self.kind == "conv":
            if len(shape) != 3 or shape[0] != self.in_size:
                raise ShapeError(f"conv expects ({self.in_size}, H, W) input, got {shape}")
            return (self.out_size,) + shape[1:]
        if self.kind == "maxpool":
            if len(shape) != 3:
                raise ShapeError(f"maxpool expects (C, H, W) input, got {shape}")
            c, h, w = shape
            if h // 2 < 1 or w // 2 < 1:
                raise ShapeError(f"maxpool underflow: spatial size {h}x{w} cannot be halved")
            return (c, h // 2, w // 2)
        if self.kind == "flatten":
            return (int(np.prod(shape)),)
        return shape


class Model:
    def __init__(self, layers: Sequence[LayerSpec], input_shape: Sequence[int], dtype="f32"):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.dtype = np.dtype(DTYPES.get(dtype, dtype))
        self.frozen = False
        self.params: dict[str, Tensor] = {}
        self.taps: list[str] = []
        self._tap_shapes: list[tuple[int, ...]] = []

        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            shape = layer.output_shape(shape)
            if layer.kind == "linear":
                self.params[f"{i}.weight"] = Tensor(np.zeros((layer.in_size, layer.out_size), self.dtype), True)
                self.params[f"{i}.bias"] = Tensor(np.zeros(layer.out_size, self.dtype), True)
            elif layer.kind == "conv":
                k = layer.kernel
                self.params[f"{i}.weight"] = Tensor(np.zeros((layer.out_size, layer.in_size, k, k), self.dtype), True)
                self.params[f"{i}.bias"] = Tensor(np.zeros(layer.out_size, self.dtype), True)
            if layer.tap is not None:
                if layer.tap in self.taps:
                    raise ShapeError(f"duplicate tap name {layer.tap!r}")
                self.taps.append(layer.tap)
                self._tap_shapes.append(shape)
        if len(shape) != 1:
            raise ShapeError(f"model must end in a flat logit vector, got per-sample shape {shape}")
        self.num_classes = shape[0]

    def __call__(self, x) -> tuple[Tensor, list[Tensor]]:
        return forward(self, x)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def tap_shapes(self) -> list[tuple[int, ...]]:
        """Per-sample tap shapes, derived from the layer list alone."""
        return list(self._tap_shapes)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ShapeError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in self.params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"tensor {name!r}: checkpoint shape {arr.shape} does not match model shape {p.shape}")
            p.data = arr.astype(self.dtype, copy=True)

    def __repr__(self) -> str:
        kinds = ",".join(layer.kind for layer in self.layers)
        return f"Model(input={self.input_shape}, K={self.num_classes}, layers=[{kinds}], params={self.num_parameters()})"


def forward(model: Model, x) -> tuple[Tensor, list[Tensor]]:
    """Run the model; returns ``(logits [B, K], [tap tensors in declaration order])``."""
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=model.dtype))
    if tuple(x.shape[1:]) != model.input_shape:
        raise ShapeError(f"input shape {x.shape} does not match model input (B,)+{model.input_shape}")
    taps = []
    h = x
    for i, layer in enumerate(model.layers):
        if layer.kind == "linear":
            h = h @ model.params[f"{i}.weight"] + model.params[f"{i}.bias"]
        elif layer.kind == "conv":
            h = F.conv2d(h, model.params[f"{i}.weight"], model.params[f"{i}.bias"])
        elif layer.kind == "relu":
            h = relu(h)
        elif layer.kind == "maxpool":
            h = F.maxpool2d(h)
        elif layer.kind == "flatten":
            h = flatten(h)
        if layer.tap is not None:
            taps.append(h)
    return h, taps


def build_mlp(input_dim: int, hidden_dims: Sequence[int], num_classes: int, seed: Optional[int] = 0, dtype="f32") -> Model:
    """linear -> relu stack with a tap after every hidden relu, then a linear head."""
    for d in [input_dim, *hidden_dims, num_classes]:
        if d < 1:
            raise ShapeError(f"all MLP dimensions must be >= 1, got {[input_dim, *hidden_dims, num_classes]}")
    layers = []
    prev = input_dim
    for j, h in enumerate(hidden_dims):
        layers.append(LayerSpec("linear", prev, h))
        layers.append(LayerSpec("relu", tap=f"hidden{j}"))
        prev = h
    layers.append(LayerSpec("linear", prev, num_classes))
    model = Model(layers, (input_dim,), dtype)
    if seed is not None:
        init_parameters(model, seed)
    return model


def build_tinyconv(
    channels_in: int,
    height: int,
    width: int,
    conv_channels: Sequence[int],
    num_classes: int,
    seed: Optional[int] = 0,
    dtype="f32",
) -> Model:
    """conv3x3 -> relu(tap) -> maxpool blocks, then flatten and a linear head."""
    if height < 4 or width < 4:
        raise ShapeError(f"tinyconv needs height, width >= 4, got {height}x{width}")
    layers = []
    prev = channels_in
    h, w = height, width
    for j, c in enumerate(conv_channels):
        layers.append(LayerSpec("conv", prev, c, kernel=3))
        layers.append(LayerSpec("relu", tap=f"conv{j}"))
        layers.append(LayerSpec("maxpool"))
        if h // 2 < 1 or w // 2 < 1:
            raise ShapeError(f"spatial underflow: block {j} receives {h}x{w}, cannot pool")
        h, w = h // 2, w // 2
        prev = c
    layers.append(LayerSpec("flatten"))
    layers.append(LayerSpec("linear", prev * h * w, num_classes))
    model = Model(layers, (channels_in, height, width), dtype)
    if seed is not None:
        init_parameters(model, seed)
    return model


def init_parameters(model: Model, seed: int) -> None:
    """Kaiming-uniform (fan-in) weights and zero biases, fully determined by ``seed``."""
    rng = np.random.default_rng(seed)
    for name, p in model.params.items():
        if name.endswith(".bias"):
            p.data = np.zeros(p.shape, model.dtype)
            continue
        fan_in = p.shape[0] if p.ndim == 2 else int(np.prod(p.shape[1:]))
        bound = math.sqrt(6.0 / fan_in)
        p.data = rng.uniform(-bound, bound, size=p.shape).astype(model.dtype)


def snapshot(model: Model) -> Model:
    """Frozen deep copy: no shared buffers, no gradients."""
    copy = Model(model.layers, model.input_shape, model.dtype)
    for name, p in model.params.items():
        copy.params[name] = Tensor(p.data.copy(), requires_grad=False)
    copy.frozen = True
    return copy


def freeze(model: Model) -> Model:
    for p in model.params.values():
        p.requires_grad = False
        p.grad = None
    model.frozen = True
    return model


def checksum(model_or_state) -> str:
    """SHA-256 over parameter names, shapes, dtypes and bytes."""
    state = model_or_state.state_dict() if isinstance(model_or_state, Model) else model_or_state
    h = hashlib.sha256()
    for name, arr in state.items():
        arr = np.ascontiguousarray(arr)
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(arr.dtype.str.encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def build_from_spec(arch: dict, input_shape: Sequence[int], num_classes: int, seed: int, dtype="f32") -> Model:
    """Build from a config mapping such as ``{"kind": "tinyconv", "channels": [4, 8]}``."""
    kind = arch["kind"]
    if kind == "mlp":
        if len(input_shape) != 1:
            raise ShapeError(f"mlp needs flat inputs, got per-sample shape {tuple(input_shape)}")
        return build_mlp(input_shape[0], arch.get("hidden", []), num_classes, seed, dtype)
    if kind == "tinyconv":
        c, h, w = input_shape
        return build_tinyconv(c, h, w, arch.get("channels", []), num_classes, seed, dtype)
    raise ShapeError(f"unknown architecture kind {kind!r}")
