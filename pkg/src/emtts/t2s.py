"""Text2Spectrum: characters to coarse mel spectrogram.

TextEncoder (non-causal) produces keys/values, AudioEncoder (causal) encodes
the previously generated frames into queries, scaled dot-product attention
aligns the two, and the causal AudioDecoder predicts the next frames from
``[context; queries]``. Training uses teacher forcing: the decoder input is
the target shifted right by one frame, so logits column ``t`` predicts target
column ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .nets import Conv, Highway, Params, init_params, param_shapes, run_stack

_WAVE = ((3, 1), (3, 3), (3, 9), (3, 27))


@dataclass(frozen=True)
class T2SConfig:
    vocab_size: int
    e: int = 128
    d: int = 256
    n_mels: int = 80
    text_highway: tuple = _WAVE * 2 + ((3, 1),) * 2 + ((1, 1),) * 2
    audio_enc_highway: tuple = _WAVE * 2 + ((3, 3),) * 2
    audio_dec_highway: tuple = _WAVE + ((3, 1),) * 2
    dec_relu_convs: int = 3
    dropout: float = 0.05
    g: float = 0.2

    def __post_init__(self):
        if min(self.vocab_size, self.e, self.d, self.n_mels) <= 0:
            raise ValueError("T2SConfig dimensions must be positive")
        if self.d % 2:
            raise ValueError("hidden dimension d must be even")

    def text_layers(self) -> list:
        p, d2 = "t2s.textenc", 2 * self.d
        layers = [Conv(f"{p}.conv0", self.e, d2, relu=True), Conv(f"{p}.conv1", d2, d2)]
        layers += [Highway(f"{p}.hw{i}", d2, k, dil) for i, (k, dil) in enumerate(self.text_highway)]
        return layers

    def audio_enc_layers(self) -> list:
        p, d = "t2s.audioenc", self.d
        layers = [Conv(f"{p}.conv0", self.n_mels, d, causal=True, relu=True),
                  Conv(f"{p}.conv1", d, d, causal=True, relu=True),
                  Conv(f"{p}.conv2", d, d, causal=True)]
        layers += [Highway(f"{p}.hw{i}", d, k, dil, causal=True)
                   for i, (k, dil) in enumerate(self.audio_enc_highway)]
        return layers

    def audio_dec_layers(self) -> list:
        p, d = "t2s.audiodec", self.d
        layers = [Conv(f"{p}.conv0", 2 * d, d, causal=True)]
        layers += [Highway(f"{p}.hw{i}", d, k, dil, causal=True)
                   for i, (k, dil) in enumerate(self.audio_dec_highway)]
        layers += [Conv(f"{p}.relu{i}", d, d, causal=True, relu=True) for i in range(self.dec_relu_convs)]
        layers.append(Conv(f"{p}.out", d, self.n_mels, causal=True))
        return layers

    def param_shapes(self) -> dict:
        shapes = {"t2s.textenc.embed.weight": (self.vocab_size, self.e)}
        for layers in (self.text_layers(), self.audio_enc_layers(), self.audio_dec_layers()):
            shapes.update(param_shapes(layers))
        return shapes


def init_t2s(cfg: T2SConfig, seed: int, stddev: float = 0.02, dtype=np.float64) -> Params:
    return init_params(cfg.param_shapes(), seed, stddev, dtype)


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# network components


def text_encode(ids, params: Params, cfg: T2SConfig, dropout: float = 0.0,
                rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """``ids`` of shape ``(N,)`` or ``(B, N)`` -> keys and values ``(B?, d, N)``."""
    ids = np.asarray(ids, dtype=np.int64)
    squeeze = ids.ndim == 1
    ids2 = ids[None] if squeeze else ids
    if ids2.size == 0 or ids2.min() < 0 or ids2.max() >= cfg.vocab_size:
        raise ValueError(f"token ids must lie in [0, {cfg.vocab_size}), got {ids.tolist()}")
    emb = ad.embedding(params["t2s.textenc.embed.weight"], ids2)   # (B, N, e)
    x = ad.transpose(emb)                                          # (B, e, N)
    # PAD positions act like the convolutions' own zero padding
    mask = (ids2 != 0)[:, None, :].astype(np.float64) if np.any(ids2 == 0) else None
    x = run_stack(x, cfg.text_layers(), params, dropout, rng, mask)
    k, v = x[:, :cfg.d], x[:, cfg.d:]
    if squeeze:
        return k[0], v[0]
    return k, v


def audio_encode(s_in, params: Params, cfg: T2SConfig, dropout: float = 0.0,
                 rng: np.random.Generator | None = None) -> Tensor:
    """Causal encoding of the decoder input frames ``(B?, F, T)`` -> ``(B?, d, T)``."""
    s_in = _tensor(s_in)
    if s_in.shape[-2] != cfg.n_mels:
        raise ValueError(f"expected {cfg.n_mels} mel bins, got {s_in.shape[-2]}")
    return run_stack(s_in, cfg.audio_enc_layers(), params, dropout, rng)


def attend(k: Tensor, v: Tensor, q: Tensor, key_mask: np.ndarray | None = None
           ) -> tuple[Tensor, Tensor, Tensor]:
    """``A = softmax_columns(K^T Q / sqrt(d))``, ``R = V A``, ``R' = [R; Q]``.

    ``key_mask`` (``(B, N)`` booleans, True for real characters) excludes
    padding keys from every column.
    """
    d = k.shape[-2]
    if v.shape[-2] != d or q.shape[-2] != d or v.shape[-1] != k.shape[-1]:
        raise ValueError(f"attention shape mismatch: K{k.shape} V{v.shape} Q{q.shape}")
    scores = ad.matmul(ad.transpose(k), q) * (1.0 / math.sqrt(d))
    if key_mask is not None:
        bias = np.where(np.asarray(key_mask, dtype=bool), 0.0, -1e9)
        scores = scores + bias.reshape(bias.shape + (1,))
    a = ad.softmax_columns(scores)
    r = ad.matmul(v, a)
    return a, r, ad.concat([r, q], axis=-2)


def audio_decode(r_prime, params: Params, cfg: T2SConfig, dropout: float = 0.0,
                 rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """``(B?, 2d, T)`` -> logits and ``Y = sigmoid(logits)``, both ``(B?, F, T)``."""
    r_prime = _tensor(r_prime)
    if r_prime.shape[-2] != 2 * cfg.d:
        raise ValueError(f"expected {2 * cfg.d} decoder input channels, got {r_prime.shape[-2]}")
    logits = run_stack(r_prime, cfg.audio_dec_layers(), params, dropout, rng)
    return logits, ad.sigmoid(logits)


# ---------------------------------------------------------------------------
# losses


def _check_target(s: np.ndarray) -> None:
    if s.size and (s.min() < 0 or s.max() > 1):
        raise ValueError("target spectrogram values must lie in [0, 1]")


def _loss_weights(shape, mask) -> np.ndarray:
    if mask is None:
        w = np.ones(shape)
    else:
        w = np.broadcast_to(np.asarray(mask, dtype=np.float64), shape)
    total = w.sum()
    if total <= 0:
        raise ValueError("loss mask selects no elements")
    return w / total


def loss_spec(logits: Tensor, target, mask=None) -> Tensor:
    """Mean binary divergence ``-S*Y_hat + log(1 + exp(Y_hat))`` over (masked) cells."""
    s = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if s.shape != logits.shape:
        raise ValueError(f"target shape {s.shape} does not match logits {logits.shape}")
    _check_target(s)
    z = logits.data
    w = _loss_weights(z.shape, mask)
    val = np.sum(w * (np.maximum(z, 0.0) - s * z + np.log1p(np.exp(-np.abs(z)))))

    def back(g):
        return (g * w * (expit(z) - s),)

    return ad.primitive("loss_spec", np.asarray(val, dtype=z.dtype), (logits,), back)


def l1_loss(y: Tensor, target, mask=None) -> Tensor:
    s = np.asarray(target, dtype=np.float64)
    w = _loss_weights(y.shape, mask)
    return ad.tsum(ad.mul(ad.tabs(ad.sub(y, s)), w))


def loss_hiera(logits: Tensor, y: Tensor, target, mask=None) -> Tensor:
    """Binary divergence plus mean absolute error on the probabilities."""
    return ad.add(loss_spec(logits, target, mask), l1_loss(y, target, mask))


def guided_attention_weights(n: int, t: int, g: float = 0.2) -> np.ndarray:
    """``W[n, t] = 1 - exp(-(n/N - t/T)^2 / (2 g^2))`` with 0-based indices."""
    pos = np.arange(n)[:, None] / n - np.arange(t)[None, :] / t
    return 1.0 - np.exp(-pos ** 2 / (2.0 * g * g))


def guided_attention_loss(a: Tensor, g: float = 0.2, text_lengths: Sequence[int] | None = None,
                          frame_lengths: Sequence[int] | None = None) -> Tensor:
    """Mean of ``A * W`` over the valid (character, frame) cells of each utterance."""
    a = _tensor(a)
    if a.ndim == 2:
        return ad.mean(ad.mul(a, guided_attention_weights(*a.shape, g)))
    b, n_max, t_max = a.shape
    text_lengths = [n_max] * b if text_lengths is None else text_lengths
    frame_lengths = [t_max] * b if frame_lengths is None else frame_lengths
    w = np.zeros(a.shape)
    for i, (n, t) in enumerate(zip(text_lengths, frame_lengths)):
        w[i, :n, :t] = guided_attention_weights(n, t, g)
    cells = float(sum(n * t for n, t in zip(text_lengths, frame_lengths)))
    return ad.tsum(ad.mul(a, w / cells))


# ---------------------------------------------------------------------------
# batching and the training objective


def shift_right(mel: np.ndarray) -> np.ndarray:
    """Decoder input for teacher forcing: zero frame, then frames ``0..T-2``."""
    out = np.zeros_like(mel)
    out[..., 1:] = mel[..., :-1]
    return out


@dataclass
class T2SBatch:
    ids: np.ndarray            # (B, N) int, PAD = 0
    mels: np.ndarray           # (B, F, T) targets
    text_lengths: list[int]
    frame_lengths: list[int]

    @property
    def key_mask(self) -> np.ndarray:
        return np.arange(self.ids.shape[1])[None, :] < np.asarray(self.text_lengths)[:, None]

    @property
    def frame_mask(self) -> np.ndarray:
        m = np.arange(self.mels.shape[2])[None, :] < np.asarray(self.frame_lengths)[:, None]
        return m[:, None, :]


def make_t2s_batch(items: Sequence[tuple[Sequence[int], np.ndarray]]) -> T2SBatch:
    """Pad ``(ids, coarse mel)`` pairs to a common length."""
    if not items:
        raise ValueError("empty batch")
    n_max = max(len(ids) for ids, _ in items)
    t_max = max(mel.shape[1] for _, mel in items)
    f = items[0][1].shape[0]
    ids = np.zeros((len(items), n_max), dtype=np.int64)
    mels = np.zeros((len(items), f, t_max))
    for i, (seq, mel) in enumerate(items):
        ids[i, :len(seq)] = seq
        mels[i, :, :mel.shape[1]] = mel
    return T2SBatch(ids, mels, [len(s) for s, _ in items], [m.shape[1] for _, m in items])


@dataclass
class T2SOutput:
    logits: Tensor
    y: Tensor
    attention: Tensor
    context: Tensor
    r_prime: Tensor
    losses: dict = field(default_factory=dict)


def t2s_forward(batch: T2SBatch, params: Params, cfg: T2SConfig, dropout: float = 0.0,
                rng: np.random.Generator | None = None, guided: bool = True) -> T2SOutput:
    """Teacher-forced pass with ``hiera``, ``attn`` and ``total`` loss terms."""
    k, v = text_encode(batch.ids, params, cfg, dropout, rng)
    q = audio_encode(shift_right(batch.mels), params, cfg, dropout, rng)
    a, r, rp = attend(k, v, q, batch.key_mask)
    logits, y = audio_decode(rp, params, cfg, dropout, rng)
    mask = batch.frame_mask
    hiera = loss_hiera(logits, y, batch.mels, mask)
    losses = {"hiera": hiera}
    total = hiera
    if guided:
        attn = guided_attention_loss(a, cfg.g, batch.text_lengths, batch.frame_lengths)
        losses["attn"] = attn
        total = ad.add(hiera, attn)
    losses["total"] = total
    return T2SOutput(logits, y, a, r, rp, losses)


def t2s_train_step(batch: T2SBatch, params: Params, opt_state, cfg: T2SConfig, train_cfg,
                   rng: np.random.Generator | None = None, guided: bool = True):
    """One Adam update on ``L_hiera (+ L_attn)``.

    Returns ``(hiera, attn, output)``; ``attn`` is ``None`` when guided
    attention is disabled. Dropout is applied only when ``rng`` is given.
    """
    from .optim import adam_step

    if batch.ids.shape[0] == 0:
        raise ValueError("empty batch")
    for p in params.values():
        p.grad = None
    rate = cfg.dropout if rng is not None else 0.0
    with Tape() as tape:
        out = t2s_forward(batch, params, cfg, rate, rng, guided)
    ad.backward(out.losses["total"], tape)
    adam_step(params, {n: p.grad for n, p in params.items()}, opt_state, train_cfg)
    attn = float(out.losses["attn"].data) if guided else None
    return float(out.losses["hiera"].data), attn, out
