"""Inference: autoregressive coarse-mel decoding, super-resolution and vocoding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, softmax

from .dsp import DspConfig, Waveform, full_to_linear, griffin_lim, write_wav
from .formats import write_emsp, write_pgm
from .nets import IncrementalStack, Params, forward_numpy
from .ssrn import SsrnConfig
from .t2s import T2SConfig, text_encode
from .train import Checkpoint, CheckpointError, load_checkpoint


@dataclass(frozen=True)
class SynthOptions:
    max_frames: int = 200
    forced_attention: bool = True
    window_back: int = 1
    window_forward: int = 3
    dwell: int = 10
    incremental: bool = False

    def __post_init__(self):
        if self.max_frames < 1:
            raise ValueError("max_frames must be at least 1")
        if self.window_forward < 1 or self.window_back < 0:
            raise ValueError("forcing window needs forward >= 1 and back >= 0")
        if self.dwell < 1:
            raise ValueError("dwell must be at least 1")


@dataclass
class DecodeResult:
    mel: np.ndarray             # (n_mels, T')
    attention: np.ndarray       # (N, T')
    truncated: bool
    trajectory: list = field(default_factory=list)

    @property
    def frames(self) -> int:
        return self.mel.shape[1]


def forced_attention_column(scores: np.ndarray, prev_pos: int, back: int = 1,
                            forward: int = 3) -> np.ndarray:
    """Softmax of ``scores`` restricted to ``[prev_pos - back, prev_pos + forward]``."""
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[0]
    if not 0 <= prev_pos < n:
        raise ValueError(f"prev_pos {prev_pos} outside 0..{n - 1}")
    masked = np.full(n, -np.inf)
    lo, hi = max(0, prev_pos - back), min(n, prev_pos + forward + 1)
    masked[lo:hi] = scores[lo:hi]
    return softmax(masked)


class _PrefixDecoder:
    """Re-runs the causal stacks over the whole prefix at every step."""

    def __init__(self, params: Params, cfg: T2SConfig):
        self.params, self.cfg = params, cfg
        self.inputs = [np.zeros(cfg.n_mels)]
        self.contexts = []

    def query(self) -> np.ndarray:
        s_in = np.stack(self.inputs, axis=1)
        self.q = forward_numpy(s_in, self.cfg.audio_enc_layers(), self.params)
        return self.q[:, -1]

    def frame(self, context: np.ndarray) -> np.ndarray:
        self.contexts.append(context)
        rp = np.concatenate([np.stack(self.contexts, axis=1), self.q], axis=0)
        logits = forward_numpy(rp, self.cfg.audio_dec_layers(), self.params)
        y = expit(logits[:, -1])
        self.inputs.append(y)
        return y


class _IncrementalDecoder:
    """Feeds one frame at a time through buffered causal stacks."""

    def __init__(self, params: Params, cfg: T2SConfig):
        self.enc = IncrementalStack(cfg.audio_enc_layers(), params)
        self.dec = IncrementalStack(cfg.audio_dec_layers(), params)
        self.next_input = np.zeros(cfg.n_mels)

    def query(self) -> np.ndarray:
        self.q = self.enc.step(self.next_input)
        return self.q

    def frame(self, context: np.ndarray) -> np.ndarray:
        y = expit(self.dec.step(np.concatenate([context, self.q])))
        self.next_input = y
        return y


def decode_coarse(ids, params: Params, cfg: T2SConfig, opts: SynthOptions = SynthOptions()
                  ) -> DecodeResult:
    """Generate coarse mel frames until attention dwells at the end of the text.

    Starts from a zero frame and feeds every prediction back into the audio
    encoder. Decoding stops once the attention argmax has stayed on the last
    character or the EOS marker for ``opts.dwell`` consecutive frames;
    hitting ``max_frames`` first marks the result as truncated.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("decode_coarse needs a nonempty 1-D token sequence")
    k, v = text_encode(ids, params, cfg)
    k, v = k.data, v.data
    n = ids.shape[0]
    scale = 1.0 / math.sqrt(cfg.d)
    dec = (_IncrementalDecoder if opts.incremental else _PrefixDecoder)(params, cfg)
    frames, columns, trajectory = [], [], []
    prev, dwell = 0, 0
    for _ in range(opts.max_frames):
        q = dec.query()
        scores = (k.T @ q) * scale
        if opts.forced_attention:
            a = forced_attention_column(scores, prev, opts.window_back, opts.window_forward)
        else:
            a = softmax(scores)
        pos = int(np.argmax(a))
        trajectory.append(pos)
        prev = pos
        columns.append(a)
        frames.append(dec.frame(v @ a))
        dwell = dwell + 1 if pos >= n - 2 else 0
        if dwell >= opts.dwell:
            return DecodeResult(np.stack(frames, 1), np.stack(columns, 1), False, trajectory)
    return DecodeResult(np.stack(frames, 1), np.stack(columns, 1), True, trajectory)


def ssrn_predict(coarse: np.ndarray, params: Params, cfg: SsrnConfig) -> np.ndarray:
    """Tape-free SSRN pass returning the full-rate spectrogram in [0, 1]."""
    return expit(forward_numpy(np.asarray(coarse, dtype=np.float64), cfg.layers(), params))


@dataclass
class SynthResult:
    waveform: Waveform
    coarse: np.ndarray
    full: np.ndarray
    attention: np.ndarray
    truncated: bool
    trajectory: list
    artifacts: dict = field(default_factory=dict)


def _as_checkpoint(ck, module: str) -> Checkpoint:
    ck = ck if isinstance(ck, Checkpoint) else load_checkpoint(ck)
    if ck.module != module:
        raise CheckpointError(f"expected a {module} checkpoint, got {ck.module}")
    return ck


def synth_utterance(text: str, t2s_ckpt, ssrn_ckpt, dsp: DspConfig = DspConfig(),
                    opts: SynthOptions = SynthOptions(), out_dir=None, stem: str = "synth"
                    ) -> SynthResult:
    """Text to waveform through both checkpoints and Griffin-Lim.

    With ``out_dir``, writes ``<stem>.wav``, ``<stem>.coarse.emsp``,
    ``<stem>.full.emsp`` and the attention image ``<stem>.attention.pgm``.
    """
    t2s, ssrn = _as_checkpoint(t2s_ckpt, "t2s"), _as_checkpoint(ssrn_ckpt, "ssrn")
    for ck in (t2s, ssrn):
        if "dsp" in ck.config and ck.config["dsp"] != dsp.__dict__:
            raise CheckpointError(f"{ck.module} checkpoint was trained with a different DSP config")
    tcfg, tparams = t2s.model()
    scfg, sparams = ssrn.model()
    if scfg.in_bins != tcfg.n_mels or scfg.out_bins != dsp.full_bins or tcfg.n_mels != dsp.n_mels:
        raise CheckpointError("t2s, ssrn and DSP configurations disagree on spectrogram sizes")
    ids = t2s.vocab.encode(text)
    dec = decode_coarse(ids, tparams, tcfg, opts)
    full = ssrn_predict(dec.mel, sparams, scfg)
    wav = griffin_lim(full_to_linear(full, dsp), dsp)
    result = SynthResult(wav, dec.mel, full, dec.attention, dec.truncated, dec.trajectory)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"wav": out / f"{stem}.wav", "coarse": out / f"{stem}.coarse.emsp",
                 "full": out / f"{stem}.full.emsp", "attention": out / f"{stem}.attention.pgm"}
        write_wav(paths["wav"], wav)
        write_emsp(paths["coarse"], dec.mel)
        write_emsp(paths["full"], full)
        write_pgm(paths["attention"], dec.attention)
        result.artifacts = paths
    return result
