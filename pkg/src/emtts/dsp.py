"""Audio I/O and the spectrogram front/back end.

Spectrograms are ``(bins, frames)`` float arrays normalized to [0, 1]:
``normalize_db(x) = clip((20 log10(max(x, 1e-5)) - ref_db + max_db) / max_db, 0, 1)``.
Frames are centered (``n_fft // 2`` zeros on each side); the waveform is
zero-padded at the end so the full-rate frame count is a multiple of the
time reduction factor.
"""

from __future__ import annotations

import logging
import wave
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

logger = logging.getLogger(__name__)

SAMPLE_RATE = 22050
AMP_FLOOR = 1e-5


class WavFormatError(ValueError):
    """A WAV file could not be ingested; ``field`` names the offending header field."""

    def __init__(self, path, field: str, detail: str):
        self.path = str(path)
        self.field = field
        super().__init__(f"{path}: unsupported WAV ({field}): {detail}")


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    warnings: list[str] = field(default_factory=list)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class DspConfig:
    sample_rate: int = SAMPLE_RATE
    n_fft: int = 1024
    hop: int = 256
    win: int = 1024
    n_mels: int = 80
    reduction: int = 4
    ref_db: float = 20.0
    max_db: float = 100.0
    preemphasis: float = 0.97
    gl_iterations: int = 60
    sharpening_power: float = 1.3
    ssrn_output: str = "linear"

    def __post_init__(self):
        if self.ssrn_output not in ("linear", "mel"):
            raise ValueError(f"ssrn_output must be 'linear' or 'mel', got {self.ssrn_output!r}")
        if min(self.sample_rate, self.n_fft, self.hop, self.win, self.n_mels, self.reduction,
               self.gl_iterations) < 1:
            raise ValueError("DSP sizes and counts must be positive")
        if self.win > self.n_fft:
            raise ValueError(f"win ({self.win}) cannot exceed n_fft ({self.n_fft})")
        if self.max_db <= 0 or self.sharpening_power <= 0 or not 0 <= self.preemphasis < 1:
            raise ValueError("max_db and sharpening_power must be positive, preemphasis in [0, 1)")

    @property
    def n_freq(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def full_bins(self) -> int:
        """Bin count of the full-rate target the SSRN learns."""
        return self.n_freq if self.ssrn_output == "linear" else self.n_mels


# ---------------------------------------------------------------------------
# WAV I/O


def load_wav(path, target_rate: int = SAMPLE_RATE) -> Waveform:
    """Read an integer PCM WAV, keep the first channel, scale to [-1, 1).

    16-bit is the normal corpus format; 24- and 32-bit files are accepted
    for material whose quantization noise must stay below the dB floor.

    Other sample rates are linearly resampled to ``target_rate`` and a
    warning is recorded on the returned waveform.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        msg = str(exc)
        fld = "format_tag" if "format" in msg else "riff_header"
        raise WavFormatError(path, fld, msg) from None
    except EOFError:
        raise WavFormatError(path, "data_chunk", "truncated file") from None
    if width not in (2, 3, 4):
        raise WavFormatError(path, "bits_per_sample", f"{8 * width}-bit samples, expected 16, 24 or 32")
    if channels < 1:
        raise WavFormatError(path, "num_channels", "no channels")
    if width == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, channels, 3)[:, 0].astype(np.int32)
        pcm = (b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)) << 8 >> 8
    else:
        pcm = np.frombuffer(raw, dtype=f"<i{width}").reshape(-1, channels)[:, 0]
    samples = pcm.astype(np.float64) / float(1 << (8 * width - 1))
    wav = Waveform(samples, rate)
    if rate != target_rate:
        wav = resample_linear(wav, target_rate)
        wav.warnings.append(f"resampled {path.name} from {rate} Hz to {target_rate} Hz")
        logger.warning(wav.warnings[-1])
    return wav


def resample_linear(wav: Waveform, rate: int) -> Waveform:
    n_out = int(round(len(wav.samples) * rate / wav.sample_rate))
    pos = np.arange(n_out) * (wav.sample_rate / rate)
    out = np.interp(pos, np.arange(len(wav.samples)), wav.samples)
    return Waveform(out, rate, list(wav.warnings))


def write_wav(path, wav: Waveform, bits: int = 16) -> None:
    """Mono integer PCM; ``bits`` is 16 or 32."""
    if bits not in (16, 32):
        raise ValueError(f"bits must be 16 or 32, got {bits}")
    full = float(1 << (bits - 1))
    pcm = np.clip(np.round(np.asarray(wav.samples) * full), -full, full - 1).astype(f"<i{bits // 8}")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(bits // 8)
        fh.setframerate(int(wav.sample_rate))
        fh.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# STFT


@lru_cache(maxsize=8)
def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def n_frames(n_samples: int, hop: int) -> int:
    return 1 + n_samples // hop


def stft(x: np.ndarray, cfg: DspConfig) -> np.ndarray:
    """Complex STFT, shape ``(n_fft // 2 + 1, 1 + len(x) // hop)``."""
    pad = cfg.n_fft // 2
    xp = np.concatenate([np.zeros(pad), np.asarray(x, dtype=np.float64), np.zeros(pad)])
    t = n_frames(len(x), cfg.hop)
    idx = np.arange(cfg.n_fft)[None, :] + cfg.hop * np.arange(t)[:, None]
    frames = xp[idx] * _window(cfg)
    return np.fft.rfft(frames, n=cfg.n_fft, axis=1).T


def istft(spec: np.ndarray, cfg: DspConfig, length: int) -> np.ndarray:
    """Least-squares inverse of :func:`stft` for a signal of ``length`` samples."""
    w = _window(cfg)
    pad = cfg.n_fft // 2
    t = spec.shape[1]
    frames = np.fft.irfft(spec.T, n=cfg.n_fft, axis=1) * w
    total = max(pad + length + pad, cfg.hop * (t - 1) + cfg.n_fft)
    num = np.zeros(total)
    den = np.zeros(total)
    for i in range(t):
        s = i * cfg.hop
        num[s:s + cfg.n_fft] += frames[i]
        den[s:s + cfg.n_fft] += w * w
    num = num[pad:pad + length]
    den = den[pad:pad + length]
    return np.where(den > 1e-10, num / np.maximum(den, 1e-10), 0.0)


def _window(cfg: DspConfig) -> np.ndarray:
    w = np.zeros(cfg.n_fft)
    off = (cfg.n_fft - cfg.win) // 2
    w[off:off + cfg.win] = hann(cfg.win)
    return w


# ---------------------------------------------------------------------------
# mel projection and normalization


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int = SAMPLE_RATE, n_fft: int = 1024, n_mels: int = 80,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Peak-one triangular filters on the HTK mel scale, shape ``(n_mels, n_fft // 2 + 1)``."""
    fmax = sample_rate / 2 if fmax is None else fmax
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None] - lo) / (mid - lo)
    down = (hi - freqs[None]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def normalize_db(mag: np.ndarray, cfg: DspConfig = DspConfig()) -> np.ndarray:
    db = 20.0 * np.log10(np.maximum(mag, AMP_FLOOR))
    return np.clip((db - cfg.ref_db + cfg.max_db) / cfg.max_db, 0.0, 1.0)


def denormalize_db(s: np.ndarray, cfg: DspConfig = DspConfig()) -> np.ndarray:
    db = np.clip(s, 0.0, 1.0) * cfg.max_db - cfg.max_db + cfg.ref_db
    return 10.0 ** (db / 20.0)


def preemphasize(x: np.ndarray, coef: float) -> np.ndarray:
    return lfilter([1.0, -coef], [1.0], x)


def deemphasize(x: np.ndarray, coef: float) -> np.ndarray:
    return lfilter([1.0], [1.0, -coef], x)


def pad_to_reduction(x: np.ndarray, cfg: DspConfig) -> np.ndarray:
    """Zero-pad so that the centered frame count is a multiple of ``cfg.reduction``."""
    t = n_frames(len(x), cfg.hop)
    target = -(-t // cfg.reduction) * cfg.reduction
    extra = (target - 1) * cfg.hop - len(x)
    if extra > 0:
        x = np.concatenate([x, np.zeros(extra)])
    return x


def decimate_time(s: np.ndarray, reduction: int = 4) -> np.ndarray:
    """Every ``reduction``-th frame starting at frame 0."""
    return s[:, ::reduction]


def magnitudes(wav: Waveform, cfg: DspConfig = DspConfig()) -> np.ndarray:
    """Linear STFT magnitude of the pre-emphasized, reduction-padded waveform."""
    if wav.sample_rate != cfg.sample_rate:
        raise ValueError(f"expected {cfg.sample_rate} Hz audio, got {wav.sample_rate} Hz")
    x = np.asarray(wav.samples, dtype=np.float64)
    if len(x) < cfg.win:
        raise ValueError(f"waveform has {len(x)} samples, shorter than one {cfg.win}-sample window")
    x = pad_to_reduction(preemphasize(x, cfg.preemphasis), cfg)
    return np.abs(stft(x, cfg))


def full_mel(mag: np.ndarray, cfg: DspConfig = DspConfig()) -> np.ndarray:
    fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels)
    return normalize_db(fb @ mag, cfg)


def spectrogram_pair(wav: Waveform, cfg: DspConfig = DspConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Training targets for both stages: ``(coarse mel, full)``.

    The coarse mel is ``n_mels x ceil(T / reduction)``; the full target is
    ``full_bins x T`` with ``T`` a multiple of the reduction factor: the
    linear spectrogram, or the undecimated mel when ``ssrn_output='mel'``.
    """
    mag = magnitudes(wav, cfg)
    mel = full_mel(mag, cfg)
    full = normalize_db(mag, cfg) if cfg.ssrn_output == "linear" else mel
    return np.ascontiguousarray(decimate_time(mel, cfg.reduction)), full


def full_to_linear(full: np.ndarray, cfg: DspConfig = DspConfig()) -> np.ndarray:
    """Normalized linear spectrogram for the vocoder from an SSRN output."""
    return full if cfg.ssrn_output == "linear" else mel_to_linear(full, cfg)


# ---------------------------------------------------------------------------
# Griffin-Lim


def griffin_lim(s: np.ndarray, cfg: DspConfig = DspConfig(), history: list | None = None) -> Waveform:
    """Reconstruct a waveform from a normalized linear magnitude spectrogram.

    When ``history`` is a list, the consistency error
    ``|| |STFT(x_i)| - target ||`` of every iterate is appended to it.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != cfg.n_freq:
        raise ValueError(f"expected a ({cfg.n_freq}, T) spectrogram, got {s.shape}")
    if s.min() < 0 or s.max() > 1:
        raise ValueError("spectrogram values must lie in [0, 1]")
    t = s.shape[1]
    length = t * cfg.hop
    if not np.any(s > 0):
        return Waveform(np.zeros(length), cfg.sample_rate)
    target = denormalize_db(s, cfg) ** cfg.sharpening_power
    spec = target.astype(np.complex128)
    x = istft(spec, cfg, length)
    for _ in range(cfg.gl_iterations):
        est = stft(x, cfg)[:, :t]
        if history is not None:
            history.append(float(np.linalg.norm(np.abs(est) - target)))
        phase = np.exp(1j * np.angle(est))
        x = istft(target * phase, cfg, length)
    x = deemphasize(x, cfg.preemphasis)
    peak = np.max(np.abs(x))
    if peak > 0:
        x = x * (0.95 / peak)
    return Waveform(x, cfg.sample_rate)


def mel_to_linear(mel_norm: np.ndarray, cfg: DspConfig = DspConfig()) -> np.ndarray:
    """Approximate normalized linear spectrogram from a normalized full-rate mel."""
    fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels)
    mag = np.maximum(np.linalg.pinv(fb) @ denormalize_db(mel_norm, cfg), 0.0)
    return normalize_db(mag, cfg)
