"""Objective metrics: mel-cepstral distortion, log-F0 correlation, attention diagonality.

MCD uses 13 mel-cepstral coefficients (c1..c13, c0 excluded) taken from the
orthonormal DCT-II of the natural-log 80-bin mel magnitude, DTW alignment with
a Euclidean local cost, and the ``(10 / ln 10) * sqrt(2)`` scaling. The mel
magnitude is floored ``max_db - ref_db`` (80) dB below its own peak, the same
dynamic range the normalized spectrograms keep, so digital silence and
vocoder residue far below that range do not dominate the distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .dsp import AMP_FLOOR, SAMPLE_RATE, DspConfig, Waveform, mel_filterbank, stft

MCD_SCALE = 10.0 / math.log(10.0) * math.sqrt(2.0)
N_CEPS = 13
F0_MIN, F0_MAX = 70.0, 400.0
VOICING_THRESHOLD = 0.3


class UndefinedCorrelation(ArithmeticError):
    """Pearson correlation is undefined (too few voiced frames or zero variance)."""


def dtw(cost: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    """Classic DTW over a local cost matrix with steps (1,0), (0,1), (1,1).

    Returns the accumulated cost and the warping path from (0, 0) to
    (n-1, m-1). Ties prefer the diagonal step.
    """
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row, prev, c = acc[i], acc[i - 1], cost[i - 1]
        for j in range(1, m + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if row[j - 1] < best:
                best = row[j - 1]
            row[j] = c[j - 1] + best
    path = []
    i, j = n, m
    while i > 0 and j > 0:
        path.append((i - 1, j - 1))
        steps = ((acc[i - 1, j - 1], i - 1, j - 1), (acc[i - 1, j], i - 1, j), (acc[i, j - 1], i, j - 1))
        _, i, j = min(steps, key=lambda s: s[0])
    path.reverse()
    return float(acc[n, m]), path


def mel_cepstrum(wav: Waveform, cfg: DspConfig = DspConfig()) -> np.ndarray:
    """``(frames, 13)`` mel-cepstral coefficients c1..c13."""
    x = np.asarray(wav.samples, dtype=np.float64)
    mag = np.abs(stft(x, cfg))
    mel = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels) @ mag
    peak = mel.max()
    floor = peak * 10.0 ** (-(cfg.max_db - cfg.ref_db) / 20.0) if peak > 0 else AMP_FLOOR
    logmel = np.log(np.maximum(mel, floor))
    ceps = dct(logmel, type=2, norm="ortho", axis=0)
    return ceps[1:N_CEPS + 1].T


@dataclass
class McdResult:
    mcd_db: float
    frames_aligned: int


def mcd_detail(ref: Waveform, syn: Waveform, cfg: DspConfig = DspConfig()) -> McdResult:
    for name, w in (("reference", ref), ("synthesized", syn)):
        if len(w.samples) == 0:
            raise ValueError(f"{name} signal is empty")
        if w.sample_rate != SAMPLE_RATE:
            raise ValueError(f"{name} signal must be {SAMPLE_RATE} Hz, got {w.sample_rate}")
    a, b = mel_cepstrum(ref, cfg), mel_cepstrum(syn, cfg)
    local = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    _, path = dtw(local)
    dist = np.mean([local[i, j] for i, j in path])
    return McdResult(MCD_SCALE * float(dist), len(path))


def mcd(ref: Waveform, syn: Waveform, cfg: DspConfig = DspConfig()) -> float:
    """Mel-cepstral distortion in dB after DTW alignment."""
    return mcd_detail(ref, syn, cfg).mcd_db


def f0_track(wav: Waveform, hop_s: float = 0.005, win_s: float = 0.025) -> np.ndarray:
    """Autocorrelation F0 per 5 ms frame; 0 marks unvoiced frames.

    The chosen lag is the first local maximum of the normalized
    autocorrelation reaching 90% of the global maximum in the 70-400 Hz
    range; frames whose peak is below 0.3 are unvoiced.
    """
    sr = wav.sample_rate
    x = np.asarray(wav.samples, dtype=np.float64)
    hop = int(round(hop_s * sr))
    win = int(round(win_s * sr))
    lag_min = int(math.ceil(sr / F0_MAX))
    lag_max = int(math.floor(sr / F0_MIN))
    n_out = max(1, 1 + (len(x) - win) // hop) if len(x) >= win else 1
    xp = np.concatenate([x, np.zeros(win + lag_max + 1)])
    lags = np.arange(lag_min, lag_max + 1)
    f0 = np.zeros(n_out)
    for i in range(n_out):
        s = i * hop
        a = xp[s:s + win]
        ea = a @ a
        if ea <= 1e-10:
            continue
        segs = np.lib.stride_tricks.sliding_window_view(xp[s + lag_min:s + lag_max + win + 1], win)
        segs = segs[:len(lags)]
        eb = np.einsum("ij,ij->i", segs, segs)
        r = (segs @ a) / np.sqrt(ea * np.maximum(eb, 1e-20))
        peak = r.max()
        if peak < VOICING_THRESHOLD:
            continue
        cand = np.flatnonzero((r >= 0.9 * peak) &
                              (r >= np.concatenate([[-np.inf], r[:-1]])) &
                              (r >= np.concatenate([r[1:], [-np.inf]])))
        lag = lags[cand[0]] if cand.size else lags[int(r.argmax())]
        f0[i] = min(max(sr / lag, F0_MIN), F0_MAX)
    return f0


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64) - np.mean(a)
    b = np.asarray(b, dtype=np.float64) - np.mean(b)
    da, db = math.sqrt(a @ a), math.sqrt(b @ b)
    if da <= 1e-12 * max(1.0, len(a)) or db <= 1e-12 * max(1.0, len(b)):
        raise UndefinedCorrelation("an F0 track has zero variance")
    return float(np.clip((a @ b) / (da * db), -1.0, 1.0))


def pcc_from_tracks(f0_ref: np.ndarray, f0_syn: np.ndarray, min_frames: int = 10) -> tuple[float, int]:
    """DTW-align voiced log-F0 values and return (PCC, aligned pair count)."""
    lr = np.log(f0_ref[f0_ref > 0])
    ls = np.log(f0_syn[f0_syn > 0])
    if len(lr) < min_frames or len(ls) < min_frames:
        raise UndefinedCorrelation("fewer than %d voiced frames" % min_frames)
    _, path = dtw(np.abs(lr[:, None] - ls[None, :] - (np.mean(lr) - np.mean(ls))))
    if len(path) < min_frames:
        raise UndefinedCorrelation("fewer than %d aligned voiced frames" % min_frames)
    ia, ib = zip(*path)
    return pearson(lr[list(ia)], ls[list(ib)]), len(path)


def f0_pcc(ref: Waveform, syn: Waveform) -> float:
    """Pearson correlation of DTW-aligned log-F0 tracks.

    Raises :class:`UndefinedCorrelation` when fewer than 10 voiced frames
    align or either track is constant.
    """
    for name, w in (("reference", ref), ("synthesized", syn)):
        if len(w.samples) == 0:
            raise ValueError(f"{name} signal is empty")
    return pcc_from_tracks(f0_track(ref), f0_track(syn))[0]


def attention_diagonality(a: np.ndarray, g: float = 0.2) -> float:
    """Mean over frames of ``exp(-(argmax_n/N - t/T)^2 / (2 g^2))``; ties go to the lowest index."""
    a = np.asarray(a.data if hasattr(a, "data") and not isinstance(a, np.ndarray) else a)
    n, t = a.shape
    peaks = np.argmax(a, axis=0)
    return float(np.mean(np.exp(-(peaks / n - np.arange(t) / t) ** 2 / (2.0 * g * g))))
