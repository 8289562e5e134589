"""Layer descriptions, parameter construction and stack evaluation.

A network is a list of layer specs. Parameters live in a flat, ordered
``dict`` mapping dotted names (``"t2s.textenc.hw3.weight"``) to
:class:`~emtts.autodiff.Parameter`.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .layers import (conv1d, conv1d_forward, conv1d_transpose, conv1d_transpose_forward,
                     highway_conv_block, highway_forward)

Params = dict


@dataclass(frozen=True)
class Conv:
    name: str
    c_in: int
    c_out: int
    k: int = 1
    dilation: int = 1
    causal: bool = False
    relu: bool = False


@dataclass(frozen=True)
class Highway:
    name: str
    channels: int
    k: int = 3
    dilation: int = 1
    causal: bool = False


@dataclass(frozen=True)
class Deconv:
    name: str
    c_in: int
    c_out: int


Layer = Union[Conv, Highway, Deconv]


def param_shapes(layers: Sequence[Layer]) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for layer in layers:
        if isinstance(layer, Conv):
            shapes[f"{layer.name}.weight"] = (layer.c_out, layer.c_in, layer.k)
            shapes[f"{layer.name}.bias"] = (layer.c_out,)
        elif isinstance(layer, Highway):
            c = layer.channels
            shapes[f"{layer.name}.weight"] = (2 * c, c, layer.k)
            shapes[f"{layer.name}.bias"] = (2 * c,)
        else:
            shapes[f"{layer.name}.weight"] = (layer.c_in, layer.c_out, 2)
    return shapes


def name_seed(seed: int, name: str) -> int:
    """Stable per-parameter seed so adding a layer never reshuffles the others."""
    return (int(seed) * 1_000_003 + zlib.crc32(name.encode())) % (2 ** 63)


def init_params(shapes: dict[str, tuple[int, ...]], seed: int, stddev: float = 0.02,
                dtype=np.float64) -> Params:
    """Gaussian weights, zero biases."""
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".bias"):
            data = np.zeros(shape, dtype=dtype)
        else:
            data = ad.gaussian_init(shape, stddev, name_seed(seed, name), dtype).data
        params[name] = Parameter(name, data)
    return params


def zero_params(shapes: dict[str, tuple[int, ...]], dtype=np.float64) -> Params:
    return {name: Parameter(name, np.zeros(shape, dtype=dtype)) for name, shape in shapes.items()}


def count_params(params: Params) -> int:
    return int(sum(p.data.size for p in params.values()))


def run_stack(x: Tensor, layers: Sequence[Layer], params: Params,
              dropout: float = 0.0, rng: np.random.Generator | None = None,
              mask: np.ndarray | None = None) -> Tensor:
    """Apply ``layers`` in order; dropout follows every layer except the last.

    ``mask`` (broadcastable to the activations, 1 on real frames) zeroes
    padded positions after every layer, so a padded sequence produces the
    same outputs on its real frames as the unpadded one.
    """
    last = len(layers) - 1
    if mask is not None:
        x = ad.mul(x, mask)
    for i, layer in enumerate(layers):
        w = params[f"{layer.name}.weight"]
        if isinstance(layer, Conv):
            x = conv1d(x, w, params[f"{layer.name}.bias"], layer.dilation, layer.causal)
            if layer.relu:
                x = ad.relu(x)
        elif isinstance(layer, Highway):
            x = highway_conv_block(x, w, params[f"{layer.name}.bias"], layer.dilation, layer.causal)
        else:
            x = conv1d_transpose(x, w)
        if mask is not None:
            x = ad.mul(x, mask)
        if i < last:
            x = ad.dropout(x, dropout, rng)
    return x


def receptive_history(layer: Layer) -> int:
    """Past frames a causal layer needs to produce its newest output."""
    if isinstance(layer, (Conv, Highway)):
        return (layer.k - 1) * layer.dilation
    raise ValueError("transposed convolutions are not used in causal stacks")


class IncrementalStack:
    """Frame-by-frame evaluation of a causal stack with per-layer input buffers.

    Each layer keeps only the trailing window of inputs it needs, so feeding
    frames one at a time reproduces a full-prefix evaluation.
    """

    def __init__(self, layers: Sequence[Layer], params: Params):
        for layer in layers:
            if isinstance(layer, Deconv) or (layer.k > 1 and not layer.causal):
                raise ValueError(f"layer {layer.name} is not causal")
        self.layers = list(layers)
        self.params = {n: p.data for n, p in params.items()}
        self.buffers: list[np.ndarray | None] = [None] * len(self.layers)

    def step(self, frame: np.ndarray) -> np.ndarray:
        """Consume one ``(C,)`` input frame, return the ``(C_out,)`` output frame."""
        x = np.asarray(frame, dtype=np.float64)[:, None]
        for i, layer in enumerate(self.layers):
            keep = receptive_history(layer) + 1
            buf = x if self.buffers[i] is None else np.concatenate([self.buffers[i], x], axis=1)
            buf = buf[:, -keep:]
            self.buffers[i] = buf
            w = self.params[f"{layer.name}.weight"]
            b = self.params[f"{layer.name}.bias"]
            if isinstance(layer, Conv):
                y = conv1d_forward(buf, w, b, layer.dilation, layer.causal)[:, -1:]
                if layer.relu:
                    y = np.maximum(y, 0.0)
            else:
                y = highway_forward(buf, w, b, layer.dilation, layer.causal)[:, -1:]
            x = y
        return x[:, 0]


def forward_numpy(x: np.ndarray, layers: Sequence[Layer], params: Params) -> np.ndarray:
    """Tape-free evaluation of a stack (dropout off)."""
    for layer in layers:
        w = params[f"{layer.name}.weight"].data
        if isinstance(layer, Conv):
            x = conv1d_forward(x, w, params[f"{layer.name}.bias"].data, layer.dilation, layer.causal)
            if layer.relu:
                x = np.maximum(x, 0.0)
        elif isinstance(layer, Highway):
            x = highway_forward(x, w, params[f"{layer.name}.bias"].data, layer.dilation, layer.causal)
        else:
            x = conv1d_transpose_forward(x, w)
    return x
