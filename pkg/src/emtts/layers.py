"""Convolutional building blocks as fused autodiff primitives.

All functions accept ``(C, T)`` or batched ``(B, C, T)`` inputs and return
outputs of the same rank. Causal convolutions use the "past taps first"
convention: ``out[t] = sum_j W[:, :, j] @ x[t - (k-1-j) * dilation]``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .autodiff import Tensor, primitive

__all__ = ["conv1d", "conv1d_transpose", "highway_conv_block", "conv_padding"]


def conv_padding(k: int, dilation: int, causal: bool) -> tuple[int, int]:
    span = (k - 1) * dilation
    if causal:
        return span, 0
    if k % 2 == 0:
        raise ValueError(f"non-causal convolution needs an odd kernel, got k={k}")
    return span // 2, span // 2


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ValueError(f"expected a (C, T) or (B, C, T) array, got shape {x.shape}")
    return x, False


def _im2col(x: np.ndarray, k: int, dilation: int, causal: bool) -> np.ndarray:
    """(B, C, T) -> (B, C*k, T) with channel-major, tap-minor rows."""
    b, c, t = x.shape
    if k == 1:
        return x
    left, right = conv_padding(k, dilation, causal)
    xp = np.zeros((b, c, t + left + right), dtype=x.dtype)
    xp[:, :, left:left + t] = x
    cols = np.empty((b, c, k, t), dtype=x.dtype)
    for j in range(k):
        cols[:, :, j, :] = xp[:, :, j * dilation:j * dilation + t]
    return cols.reshape(b, c * k, t)


def _col2im(gcols: np.ndarray, c: int, k: int, dilation: int, causal: bool) -> np.ndarray:
    b, _, t = gcols.shape
    if k == 1:
        return gcols
    left, right = conv_padding(k, dilation, causal)
    g4 = gcols.reshape(b, c, k, t)
    gxp = np.zeros((b, c, t + left + right), dtype=gcols.dtype)
    for j in range(k):
        gxp[:, :, j * dilation:j * dilation + t] += g4[:, :, j, :]
    return gxp[:, :, left:left + t]


def _weight_grad(g: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """sum_b g[b] @ cols[b].T"""
    if g.shape[0] == 1:
        return g[0] @ cols[0].T
    return np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)


def _check_conv(x: np.ndarray, w: np.ndarray, dilation: int, causal: bool) -> None:
    if w.ndim != 3:
        raise ValueError(f"conv weight must be (C_out, C_in, k), got {w.shape}")
    if x.shape[-2] != w.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[-2]}, weight expects {w.shape[1]}")
    if dilation < 1:
        raise ValueError("dilation must be a positive integer")
    conv_padding(w.shape[2], dilation, causal)


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                   dilation: int = 1, causal: bool = False) -> np.ndarray:
    """Plain numpy same-length convolution (no tape)."""
    _check_conv(x, w, dilation, causal)
    xb, squeeze = _batched(x)
    c_out, c_in, k = w.shape
    out = w.reshape(c_out, c_in * k) @ _im2col(xb, k, dilation, causal)
    if b is not None:
        out += b[:, None]
    return out[0] if squeeze else out


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           dilation: int = 1, causal: bool = False) -> Tensor:
    """Same-length 1-D convolution with implicit zero padding."""
    _check_conv(x.data, weight.data, dilation, causal)
    xb, squeeze = _batched(x.data)
    w = weight.data
    c_out, c_in, k = w.shape
    w2 = w.reshape(c_out, c_in * k)
    cols = _im2col(xb, k, dilation, causal)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]

    def back(g):
        gb3 = g[None] if squeeze else g
        gw = _weight_grad(gb3, cols).reshape(w.shape)
        gx = _col2im(w2.T @ gb3, c_in, k, dilation, causal)
        gbias = gb3.sum(axis=(0, 2)) if bias is not None else None
        return (gx[0] if squeeze else gx), gw, gbias

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return primitive("conv1d", out[0] if squeeze else out, inputs,
                     back if bias is not None else (lambda g: back(g)[:2]))


def conv1d_transpose_forward(x: np.ndarray, w: np.ndarray, stride: int = 2) -> np.ndarray:
    _check_transpose(x, w, stride)
    xb, squeeze = _batched(x)
    b, _, t = xb.shape
    out = np.empty((b, w.shape[1], 2 * t), dtype=np.result_type(x, w))
    for j in range(2):
        out[:, :, j::2] = w[:, :, j].T @ xb
    return out[0] if squeeze else out


def _check_transpose(x: np.ndarray, w: np.ndarray, stride: int) -> None:
    if stride != 2:
        raise ValueError(f"only stride 2 is supported, got {stride}")
    if w.ndim != 3 or w.shape[2] != 2:
        raise ValueError(f"transposed conv weight must be (C_in, C_out, 2), got {w.shape}")
    if x.shape[-2] != w.shape[0]:
        raise ValueError(f"channel mismatch: input has {x.shape[-2]}, weight expects {w.shape[0]}")


def conv1d_transpose(x: Tensor, weight: Tensor, stride: int = 2) -> Tensor:
    """Stride-2, kernel-2 transposed convolution: ``out[2i + j] += W[:, :, j].T @ x[i]``."""
    out = conv1d_transpose_forward(x.data, weight.data, stride)
    xd, w = x.data, weight.data
    xb, squeeze = _batched(xd)

    def back(g):
        gb3 = g[None] if squeeze else g
        gx = sum(w[:, :, j] @ gb3[:, :, j::2] for j in range(2))
        gw = np.stack([np.einsum("bct,bot->co", xb, gb3[:, :, j::2], optimize=True)
                       for j in range(2)], axis=2)
        return (gx[0] if squeeze else gx), gw

    return primitive("conv1d_transpose", out, (x, weight), back)


def highway_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                    dilation: int = 1, causal: bool = False) -> np.ndarray:
    c = x.shape[-2]
    _check_highway(c, w)
    h = conv1d_forward(x, w, b, dilation, causal)
    gate = expit(h[..., :c, :])
    return gate * h[..., c:, :] + (1.0 - gate) * x


def _check_highway(c: int, w: np.ndarray) -> None:
    if w.shape[0] != 2 * c or w.shape[1] != c:
        raise ValueError(f"highway weight must be ({2 * c}, {c}, k), got {w.shape}")


def highway_conv_block(x: Tensor, weight: Tensor, bias: Tensor,
                       dilation: int = 1, causal: bool = False) -> Tensor:
    """Gated residual convolution ``sigmoid(H1) * H2 + (1 - sigmoid(H1)) * x``.

    ``weight`` maps C to 2C channels; the first C output rows are the gate
    pre-activation H1, the last C the candidate H2.
    """
    xd = x.data
    c = xd.shape[-2]
    _check_conv(xd, weight.data, dilation, causal)
    _check_highway(c, weight.data)
    xb, squeeze = _batched(xd)
    w = weight.data
    k = w.shape[2]
    w2 = w.reshape(2 * c, c * k)
    cols = _im2col(xb, k, dilation, causal)
    h = w2 @ cols
    h += bias.data[:, None]
    gate = expit(h[:, :c])
    h2 = h[:, c:]
    out = gate * h2 + (1.0 - gate) * xb

    def back(g):
        gb3 = g[None] if squeeze else g
        gh = np.empty_like(h)
        gh[:, c:] = gb3 * gate
        gh[:, :c] = gb3 * (h2 - xb) * gate * (1.0 - gate)
        gw = _weight_grad(gh, cols).reshape(w.shape)
        gx = _col2im(w2.T @ gh, c, k, dilation, causal) + gb3 * (1.0 - gate)
        return (gx[0] if squeeze else gx), gw, gh.sum(axis=(0, 2))

    return primitive("highway", out[0] if squeeze else out, (x, weight, bias), back)
