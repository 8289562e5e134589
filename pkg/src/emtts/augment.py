"""Spectrogram-domain augmentation: SpecAugment and Spectrogram-Resize.

All operations take a ``(F, T)`` normalized spectrogram and return a new
array of the same shape with values still in [0, 1]. Masks fill with 0,
the normalized dB floor.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .formats import write_emsp


@dataclass(frozen=True)
class AugmentPolicy:
    warp_W: int = 5
    mask_F: int = 15
    mask_T: int = 20
    n_freq_masks: int = 1
    n_time_masks: int = 1
    resize_ratios: tuple = (0.85, 0.95, 1.05, 1.15)
    expansion_factor: int = 6
    n_mels: int = 80

    def validate(self) -> None:
        if min(self.warp_W, self.mask_F, self.mask_T, self.n_freq_masks, self.n_time_masks) < 0:
            raise ValueError("augmentation widths and counts must be nonnegative")
        if self.mask_F >= self.n_mels:
            raise ValueError(f"mask_F={self.mask_F} must be smaller than n_mels={self.n_mels}")
        if self.expansion_factor < 1:
            raise ValueError("expansion_factor must be at least 1")
        if not self.resize_ratios or any(r <= 0 for r in self.resize_ratios):
            raise ValueError("resize ratios must be positive")


def _interp_rows(s: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Linear interpolation of every row of ``s`` at fractional column positions."""
    n = s.shape[1]
    pos = np.clip(pos, 0.0, n - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    frac = pos - lo
    return s[:, lo] * (1.0 - frac) + s[:, hi] * frac


def warp_positions(t: int, anchor: int, w: int) -> np.ndarray:
    """Source position for every output frame of a single-anchor time warp."""
    i = np.arange(t, dtype=np.float64)
    dest = anchor + w
    left = i * anchor / dest
    right = anchor + (i - dest) * (t - 1 - anchor) / (t - 1 - dest)
    return np.where(i <= dest, left, right)


def apply_time_warp(s: np.ndarray, anchor: int, w: int, max_warp: int | None = None) -> np.ndarray:
    """Move frame ``anchor`` to ``anchor + w``, stretching both sides linearly.

    Frames 0 and T-1 stay fixed. ``max_warp`` (the policy's W) additionally
    requires ``W <= anchor <= T - W``, ``|w| <= W`` and ``T > 2W``.
    """
    s = np.asarray(s)
    t = s.shape[1]
    bound = abs(w) if max_warp is None else max_warp
    if abs(w) > bound or t <= 2 * bound or not bound <= anchor <= t - bound:
        raise ValueError(f"time warp out of range: T={t}, anchor={anchor}, w={w}, W={bound}")
    if w == 0:
        return s.copy()
    if not (0 < anchor < t - 1 and 0 < anchor + w < t - 1):
        raise ValueError(f"time warp moves an endpoint: T={t}, anchor={anchor}, w={w}")
    return _interp_rows(s, warp_positions(t, anchor, w))


def apply_freq_mask(s: np.ndarray, f0: int, f: int) -> np.ndarray:
    s = np.asarray(s)
    if f0 < 0 or f < 0 or f0 + f > s.shape[0]:
        raise ValueError(f"frequency mask [{f0}, {f0 + f}) outside 0..{s.shape[0]}")
    out = s.copy()
    out[f0:f0 + f, :] = 0.0
    return out


def apply_time_mask(s: np.ndarray, t0: int, t: int) -> np.ndarray:
    s = np.asarray(s)
    if t0 < 0 or t < 0 or t0 + t > s.shape[1]:
        raise ValueError(f"time mask [{t0}, {t0 + t}) outside 0..{s.shape[1]}")
    out = s.copy()
    out[:, t0:t0 + t] = 0.0
    return out


def resize_axis(s: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    """Linear resampling of one axis to ``n_out`` samples (half-pixel centres)."""
    s = np.asarray(s)
    src = s if axis == 1 else s.T
    n_in = src.shape[1]
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    out = _interp_rows(src, pos)
    return out if axis == 1 else out.T


def spec_resize(s: np.ndarray, ratio: float, axis: str = "frequency") -> np.ndarray:
    """Rescale one axis by ``ratio`` then zero-pad or cut the high end back to the input shape."""
    s = np.asarray(s)
    if axis not in ("frequency", "time"):
        raise ValueError(f"axis must be 'frequency' or 'time', got {axis!r}")
    ax = 0 if axis == "frequency" else 1
    extent = s.shape[ax]
    if not ratio > 0:
        raise ValueError("resize ratio must be positive")
    n = int(round(extent * ratio))
    if n < 1:
        raise ValueError(f"ratio {ratio} leaves no samples on the {axis} axis")
    if n == extent:
        return s.copy()
    r = resize_axis(s, n, ax)
    out = np.zeros_like(s, dtype=np.result_type(s, np.float64))
    keep = min(n, extent)
    if ax == 0:
        out[:keep] = r[:keep]
    else:
        out[:, :keep] = r[:, :keep]
    return out


# ---------------------------------------------------------------------------
# corpus expansion


def utterance_seed(seed: int, uid: str, variant: int) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{uid}:{variant}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def augment_pair(coarse: np.ndarray, full: np.ndarray, policy: AugmentPolicy,
                 rng: np.random.Generator, reduction: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """One random variant of a (coarse mel, full spectrogram) training pair.

    Time operations act on both arrays at matching rates; frequency masks
    act on the coarse mel only (the SSRN input) and frequency resizing is
    applied to both along their own bin axes.
    """
    c, f = np.array(coarse, dtype=np.float64), np.array(full, dtype=np.float64)
    t = c.shape[1]
    wmax = policy.warp_W
    if wmax > 0 and t > 2 * wmax + 2:
        anchor = int(rng.integers(max(wmax, 1), t - wmax))
        w = int(rng.integers(-wmax, wmax + 1))
        if 0 < anchor + w < t - 1 and 0 < anchor < t - 1:
            c = apply_time_warp(c, anchor, w, wmax)
            tf = f.shape[1]
            fa, fw = anchor * reduction, w * reduction
            if 0 < fa + fw < tf - 1 and 0 < fa < tf - 1:
                f = _interp_rows(f, warp_positions(tf, fa, fw))
    for _ in range(policy.n_freq_masks):
        width = int(rng.integers(0, policy.mask_F + 1))
        f0 = int(rng.integers(0, c.shape[0] - width + 1))
        c = apply_freq_mask(c, f0, width)
    for _ in range(policy.n_time_masks):
        width = int(rng.integers(0, min(policy.mask_T, t) + 1))
        t0 = int(rng.integers(0, t - width + 1))
        c = apply_time_mask(c, t0, width)
        f = apply_time_mask(f, t0 * reduction, min(width * reduction, f.shape[1] - t0 * reduction))
    ratio = float(policy.resize_ratios[int(rng.integers(len(policy.resize_ratios)))])
    axis = "frequency" if rng.random() < 0.5 else "time"
    if int(round(c.shape[0 if axis == "frequency" else 1] * ratio)) >= 1:
        c = spec_resize(c, ratio, axis)
        f = spec_resize(f, ratio, axis)
    return np.clip(c, 0.0, 1.0), np.clip(f, 0.0, 1.0)


def expand_corpus(corpus, policy: AugmentPolicy, seed: int, out_dir=None):
    """Add ``expansion_factor - 1`` augmented variants per source utterance.

    Text and tokens are copied unchanged; ``augmented_from`` names the
    source. With ``out_dir`` the new spectrograms are written as EMSP files
    there, otherwise they stay in memory. Variants depend only on
    ``(seed, utterance id, variant index)``.
    """
    policy.validate()
    if len(corpus) == 0:
        raise ValueError("cannot expand an empty corpus")
    if policy.expansion_factor == 1:
        return corpus
    out = corpus.copy()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    for entry in list(corpus.entries):
        coarse, full = entry.load_coarse(), entry.load_full()
        for k in range(1, policy.expansion_factor):
            rng = utterance_seed(seed, entry.uid, k)
            c, f = augment_pair(coarse, full, policy, rng)
            uid = f"{entry.uid}__aug{k}"
            new = replace(entry, uid=uid, augmented_from=entry.uid, coarse=c, full=f,
                          coarse_path=None, full_path=None)
            if out_dir is not None:
                new.coarse_path = out_dir / f"{uid}.coarse.emsp"
                new.full_path = out_dir / f"{uid}.full.emsp"
                write_emsp(new.coarse_path, c)
                write_emsp(new.full_path, f)
                new.coarse = new.full = None
            out.entries.append(new)
    return out
