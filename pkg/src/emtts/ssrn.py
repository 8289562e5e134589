"""Spectrogram super-resolution network: coarse mel -> full-rate spectrogram.

Frequency resolution grows through channel width, time resolution through
two stride-2 transposed convolutions. All convolutions are non-causal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .nets import Conv, Deconv, Highway, Params, init_params, param_shapes, run_stack
from .t2s import loss_hiera


@dataclass(frozen=True)
class SsrnConfig:
    c: int = 512
    in_bins: int = 80
    out_bins: int = 513
    dropout: float = 0.05

    upsample: int = 4

    def __post_init__(self):
        if min(self.c, self.in_bins, self.out_bins) <= 0:
            raise ValueError("SsrnConfig dimensions must be positive")
        if self.upsample != 4:
            raise ValueError("SSRN upsamples time by exactly 4 (two stride-2 deconvolutions)")

    def layers(self) -> list:
        p, c, f = "ssrn", self.c, self.out_bins
        layers = [Conv(f"{p}.conv0", self.in_bins, c),
                  Highway(f"{p}.hw0", c, 3, 1), Highway(f"{p}.hw1", c, 3, 3)]
        for i in range(2):
            layers += [Deconv(f"{p}.up{i}", c, c),
                       Highway(f"{p}.up{i}.hw0", c, 3, 1), Highway(f"{p}.up{i}.hw1", c, 3, 3)]
        layers += [Conv(f"{p}.conv1", c, 2 * c),
                   Highway(f"{p}.hw2", 2 * c, 3, 1), Highway(f"{p}.hw3", 2 * c, 3, 1),
                   Conv(f"{p}.conv2", 2 * c, f),
                   Conv(f"{p}.relu0", f, f, relu=True), Conv(f"{p}.relu1", f, f, relu=True),
                   Conv(f"{p}.out", f, f)]
        return layers

    def param_shapes(self) -> dict:
        return param_shapes(self.layers())


def init_ssrn(cfg: SsrnConfig, seed: int, stddev: float = 0.02, dtype=np.float64) -> Params:
    return init_params(cfg.param_shapes(), seed, stddev, dtype)


def ssrn_forward(coarse, params: Params, cfg: SsrnConfig, dropout: float = 0.0,
                 rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """``(B?, in_bins, T')`` -> logits and sigmoid output ``(B?, out_bins, 4 T')``."""
    x = coarse if isinstance(coarse, Tensor) else Tensor(np.asarray(coarse, dtype=np.float64))
    if x.shape[-2] != cfg.in_bins:
        raise ValueError(f"SSRN expects {cfg.in_bins} input bins, got {x.shape[-2]}")
    if x.shape[-1] < 1:
        raise ValueError("SSRN input needs at least one frame")
    logits = run_stack(x, cfg.layers(), params, dropout, rng)
    return logits, ad.sigmoid(logits)


def ssrn_loss(coarse: np.ndarray, full: np.ndarray, params: Params, cfg: SsrnConfig,
              mask: np.ndarray | None = None, dropout: float = 0.0,
              rng: np.random.Generator | None = None) -> Tensor:
    logits, y = ssrn_forward(coarse, params, cfg, dropout, rng)
    return loss_hiera(logits, y, full, mask)


def ssrn_train_step(coarse: np.ndarray, full: np.ndarray, mask: np.ndarray | None,
                    params: Params, opt_state, cfg: SsrnConfig, train_cfg,
                    rng: np.random.Generator | None = None) -> float:
    """One Adam update on the masked hierarchical loss; returns its value."""
    from .optim import adam_step

    for p in params.values():
        p.grad = None
    rate = cfg.dropout if rng is not None else 0.0
    with Tape() as tape:
        loss = ssrn_loss(coarse, full, params, cfg, mask, rate, rng)
    ad.backward(loss, tape)
    adam_step(params, {n: p.grad for n, p in params.items()}, opt_state, train_cfg)
    return float(loss.data)
