"""Deterministic synthetic speech-like corpus for desk-scale training.

Every character is a steady harmonic complex at its own fundamental, with
partials kept only inside a few character-specific frequency bands (a crude
formant pattern). All partials sit exactly on STFT bin centres, so the
normalized spectrograms are close to binary and the mapping
text -> spectrogram is learnable within minutes, while the spectra still
span the whole band the way speech does. Space renders as silence.
Characters last ``CHAR_HOPS`` hops with short raised-cosine onsets and
offsets.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dsp import DspConfig, Waveform, write_wav

# character -> (fundamental bin, partial bands in Hz)
VOICES = {
    "a": (4, ((300, 800), (1200, 2400))),
    "b": (5, ((200, 500), (2500, 4000))),
    "c": (6, ((500, 1200), (5000, 8000))),
    "d": (4, ((250, 600), (1800, 3000), (6000, 9000))),
    "e": (5, ((400, 900), (3000, 5000))),
    "f": (7, ((700, 1500), (4000, 6500))),
    "g": (6, ((200, 450), (1000, 1800), (7000, 10000))),
    "h": (7, ((350, 700), (2200, 3500))),
}
TEXTS = [
    ("toy001", "abc defg"),
    ("toy002", "hgf edcba"),
    ("toy003", "bad cafe"),
    ("toy004", "egg head"),
    ("toy005", "fab deg ch"),
]
CHAR_HOPS = 16
LEAD_HOPS = 8
TAIL_HOPS = 56
FADE = 256
AMPLITUDE = 0.8


def tone(ch: str, n_samples: int, cfg: DspConfig = DspConfig()) -> np.ndarray:
    """Unit-peak harmonic complex for one character."""
    k0, bands = VOICES[ch]
    t = np.arange(n_samples)
    x = np.zeros(n_samples)
    for m in range(1, (cfg.n_fft // 2) // k0):
        f = k0 * m * cfg.sample_rate / cfg.n_fft
        if m == 1 or any(lo <= f <= hi for lo, hi in bands):
            # quadratic phases keep the crest factor low
            x += np.sin(2 * np.pi * k0 * m * t / cfg.n_fft + 0.7 * m * m)
    return x / np.max(np.abs(x))


def render(text: str, cfg: DspConfig = DspConfig()) -> Waveform:
    seg = CHAR_HOPS * cfg.hop
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(FADE) / FADE)
    env = np.ones(seg)
    env[:FADE] = ramp
    env[-FADE:] = ramp[::-1]
    parts = [np.zeros(LEAD_HOPS * cfg.hop)]
    for ch in text:
        if ch == " ":
            parts.append(np.zeros(seg))
        else:
            parts.append(AMPLITUDE * env * tone(ch, seg, cfg))
    # the tail outlasts the default decoding dwell so the model learns to rest on EOS
    parts.append(np.zeros(TAIL_HOPS * cfg.hop))
    return Waveform(np.concatenate(parts), cfg.sample_rate)


def write_toy_corpus(root, texts=TEXTS) -> Path:
    """Write ``metadata.tsv`` and ``wavs/<id>.wav`` under ``root``.

    Clips are stored as 32-bit PCM; 16-bit quantization noise would lift
    the silent bins well above the normalization floor.
    """
    root = Path(root)
    (root / "wavs").mkdir(parents=True, exist_ok=True)
    lines = []
    for uid, text in texts:
        write_wav(root / "wavs" / f"{uid}.wav", render(text), bits=32)
        lines.append(f"{uid}\t{text}\n")
    (root / "metadata.tsv").write_text("".join(lines), encoding="utf-8")
    return root
