"""Finite-difference audit of every differentiable block and both model losses.

Each check builds a small float64 problem, reads its output through a fixed
random projection (so every output element carries gradient) and compares
tape gradients with central differences.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, grad_check
from .layers import conv1d, conv1d_transpose, highway_conv_block
from .ssrn import SsrnConfig, ssrn_loss
from .t2s import (T2SConfig, attend, guided_attention_loss, l1_loss, loss_hiera, loss_spec,
                  make_t2s_batch, t2s_forward)

EPS = 1e-5
TOLERANCE = 1e-4
# Whole-model losses have many exactly-zero gradients (dead ReLUs, the PAD row)
# whose difference quotients are pure roundoff, around 1e-11 per unit loss.
MODEL_FLOOR = 1e-6


@dataclass
class BlockResult:
    block: str
    max_rel_error: float
    seconds: float

    @property
    def ok(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _p(name: str, rng: np.random.Generator, shape, scale: float = 0.5) -> Parameter:
    return Parameter(name, rng.normal(0.0, scale, shape))


def _random_params(shapes: dict, rng: np.random.Generator, scale: float = 0.3) -> dict:
    # biases too: zero biases put padded positions exactly on the ReLU kink
    return {name: Parameter(name, rng.normal(0.0, scale, shape)) for name, shape in shapes.items()}


def _checks(seed: int):
    rng = np.random.default_rng(seed)

    def conv(causal, dilation):
        x, w, b = _p("x", rng, (2, 3, 9)), _p("w", rng, (4, 3, 3)), _p("b", rng, (4,))
        r = rng.normal(size=(2, 4, 9))
        return (lambda: ad.tsum(ad.mul(conv1d(x, w, b, dilation, causal), r))), [x, w, b]

    def deconv():
        x, w = _p("x", rng, (2, 3, 5)), _p("w", rng, (3, 4, 2))
        r = rng.normal(size=(2, 4, 10))
        return (lambda: ad.tsum(ad.mul(conv1d_transpose(x, w), r))), [x, w]

    def highway(causal, dilation):
        x, w, b = _p("x", rng, (2, 3, 8)), _p("w", rng, (6, 3, 3)), _p("b", rng, (6,))
        r = rng.normal(size=(2, 3, 8))
        return (lambda: ad.tsum(ad.mul(highway_conv_block(x, w, b, dilation, causal), r))), [x, w, b]

    def attention():
        table = _p("embed", rng, (7, 4))
        q = _p("q", rng, (2, 4, 6))
        ids = np.array([[2, 3, 4, 1], [5, 6, 1, 0]])
        mask = ids != 0
        r = rng.normal(size=(2, 8, 6))

        def f():
            e = ad.transpose(ad.embedding(table, ids))
            _, _, rp = attend(e, ad.mul(e, 0.7), q, mask)
            return ad.tsum(ad.mul(rp, r))
        return f, [table, q]

    def losses():
        z = _p("logits", rng, (2, 5, 6), 2.0)
        s = rng.uniform(size=(2, 5, 6))
        mask = np.ones((2, 1, 6))
        mask[1, :, 4:] = 0
        return (lambda: loss_hiera(z, ad.sigmoid(z), s, mask)), [z]

    def loss_terms():
        z = _p("logits", rng, (4, 7), 2.0)
        s = rng.uniform(size=(4, 7))
        return (lambda: ad.add(loss_spec(z, s), ad.mul(l1_loss(ad.sigmoid(z), s), 0.5))), [z]

    def guided():
        m = _p("scores", rng, (2, 5, 7), 1.0)
        return (lambda: guided_attention_loss(ad.softmax_columns(m), 0.2, [5, 3], [7, 4])), [m]

    def t2s():
        cfg = T2SConfig(vocab_size=7, e=6, d=6, n_mels=5)
        params = _random_params(cfg.param_shapes(), rng)
        batch = make_t2s_batch([([2, 3, 4, 1], rng.uniform(size=(5, 6))),
                                ([5, 6, 1], rng.uniform(size=(5, 4)))])
        return (lambda: t2s_forward(batch, params, cfg).losses["total"]), list(params.values())

    def ssrn():
        cfg = SsrnConfig(c=4, in_bins=5, out_bins=7)
        params = _random_params(cfg.param_shapes(), rng)
        coarse, full = rng.uniform(size=(2, 5, 3)), rng.uniform(size=(2, 7, 12))
        mask = np.ones((2, 1, 12))
        mask[1, :, 8:] = 0
        return (lambda: ssrn_loss(coarse, full, params, cfg, mask)), list(params.values())

    return [
        ("conv1d", lambda: conv(False, 2), 24, 1e-8),
        ("conv1d_causal", lambda: conv(True, 3), 24, 1e-8),
        ("conv1d_transpose", deconv, 24, 1e-8),
        ("highway", lambda: highway(False, 3), 24, 1e-8),
        ("highway_causal", lambda: highway(True, 2), 24, 1e-8),
        ("embedding_attention", attention, 24, 1e-8),
        ("loss_spec_l1", loss_terms, 24, 1e-8),
        ("loss_hiera_masked", losses, 24, 1e-8),
        ("guided_attention", guided, 24, 1e-8),
        ("t2s_full_loss", t2s, 6, MODEL_FLOOR),
        ("ssrn_full_loss", ssrn, 6, MODEL_FLOOR),
    ]


def run_suite(seed: int = 0, eps: float = EPS) -> list[BlockResult]:
    results = []
    for name, build, coords, floor in _checks(seed):
        t0 = time.perf_counter()
        f, params = build()
        err = grad_check(f, params, eps=eps, max_coords=coords, seed=seed, floor=floor)
        results.append(BlockResult(name, err, time.perf_counter() - t0))
    return results
