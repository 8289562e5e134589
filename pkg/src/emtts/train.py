"""Training orchestration: configuration, checkpoints, SSRN crops and the loop.

Each step draws its batch and dropout masks from
``np.random.default_rng([seed, step])``, so a run resumed from a checkpoint
follows the same trajectory as an uninterrupted one.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .augment import AugmentPolicy, augment_pair
from .autodiff import Parameter
from .corpus import CorpusIndex
from .metrics import attention_diagonality
from .nets import Params, count_params
from .optim import AdamState, NonFiniteGradientError
from .ssrn import SsrnConfig, init_ssrn, ssrn_train_step
from .t2s import T2SConfig, init_t2s, make_t2s_batch, t2s_train_step
from .text import Vocabulary

logger = logging.getLogger(__name__)

MAGIC = b"EMTT"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<4sIQ")
DEFAULT_LR = {"t2s": 2e-4, "ssrn": 2e-5}


class CheckpointError(ValueError):
    pass


class TrainingAborted(RuntimeError):
    def __init__(self, step: int, reason: str, last_checkpoint: Path | None):
        self.step = step
        self.last_checkpoint = last_checkpoint
        super().__init__(f"training aborted at step {step}: {reason}; "
                         f"last checkpoint {last_checkpoint or 'none'}")


@dataclass(frozen=True)
class TrainConfig:
    module: str = "t2s"
    learning_rate: float | None = None
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-6
    batch_size: int = 16
    max_steps: int = 1000
    checkpoint_every: int = 2000
    seed: int = 0
    crop_T: int = 64
    dropout: float = 0.05
    guided_attention: bool = True
    use_split: str = "train"
    deterministic: bool = True
    e: int = 128
    d: int = 256
    ssrn_c: int = 512
    init_stddev: float = 0.02
    augment_on_the_fly: bool = False

    def __post_init__(self):
        if self.module not in DEFAULT_LR:
            raise ValueError(f"module must be 't2s' or 'ssrn', got {self.module!r}")
        if self.learning_rate is None:
            object.__setattr__(self, "learning_rate", DEFAULT_LR[self.module])
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.checkpoint_every < 1 or self.max_steps < 1 or self.batch_size < 1:
            raise ValueError("checkpoint_every, max_steps and batch_size must be at least 1")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0 and self.eps > 0):
            raise ValueError("Adam betas must lie in [0, 1) and eps must be positive")
        if self.crop_T < 4 or self.crop_T % 4:
            raise ValueError("crop_T must be a positive multiple of 4")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.use_split not in ("train", "val", "all"):
            raise ValueError("use_split must be train, val or all")

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


def model_config(cfg: TrainConfig, vocab_size: int, bins: dict | None = None):
    """Model hyperparameters; ``bins`` gives the ``mel`` and ``full`` spectrogram heights."""
    bins = bins or {"mel": 80, "full": 513}
    if cfg.module == "t2s":
        return T2SConfig(vocab_size=vocab_size, e=cfg.e, d=cfg.d, n_mels=bins["mel"],
                         dropout=cfg.dropout)
    return SsrnConfig(c=cfg.ssrn_c, in_bins=bins["mel"], out_bins=bins["full"],
                      dropout=cfg.dropout)


def init_model(cfg: TrainConfig, vocab_size: int, bins: dict | None = None) -> tuple:
    mcfg = model_config(cfg, vocab_size, bins)
    init = init_t2s if cfg.module == "t2s" else init_ssrn
    return mcfg, init(mcfg, cfg.seed, cfg.init_stddev)


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    module: str
    step: int
    params: dict            # name -> ndarray
    adam: AdamState
    config: dict            # snapshot: train, vocab, dsp, ...
    version: int = FORMAT_VERSION

    def parameters(self) -> Params:
        return {n: Parameter(n, a.copy()) for n, a in self.params.items()}

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.config["train"])

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(list(self.config["vocab"]))

    def model(self):
        """``(model config, parameters)`` rebuilt from the snapshot."""
        return (model_config(self.train_config, len(self.vocab), self.config.get("bins")),
                self.parameters())

    def n_params(self) -> int:
        return count_params(self.parameters())


def _encode_tensors(groups: dict) -> tuple[list, bytes]:
    index, buf = [], io.BytesIO()
    for group, arrays in groups.items():
        for name in sorted(arrays):
            a = np.ascontiguousarray(arrays[name], dtype="<f8")
            index.append({"group": group, "name": name, "shape": list(a.shape),
                          "offset": buf.tell()})
            buf.write(a.tobytes())
    return index, buf.getvalue()


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    """Serialized form: header, JSON metadata, float64 payload, SHA-256 of all preceding bytes."""
    index, payload = _encode_tensors({"param": ckpt.params, "m": ckpt.adam.m, "v": ckpt.adam.v})
    meta = json.dumps({"module": ckpt.module, "step": ckpt.step, "adam_step": ckpt.adam.step,
                       "config": ckpt.config, "tensors": index},
                      sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _HEAD.pack(MAGIC, ckpt.version, len(meta)) + meta + payload
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(ckpt))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEAD.size + 32:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, meta_len = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (file corrupted)")
    meta = json.loads(body[_HEAD.size:_HEAD.size + meta_len])
    payload = body[_HEAD.size + meta_len:]
    groups = {"param": {}, "m": {}, "v": {}}
    for t in meta["tensors"]:
        n = int(np.prod(t["shape"], dtype=np.int64))
        a = np.frombuffer(payload, dtype="<f8", count=n, offset=t["offset"])
        groups[t["group"]][t["name"]] = a.reshape(t["shape"]).astype(np.float64)
    adam = AdamState(meta["adam_step"], groups["m"], groups["v"])
    return Checkpoint(meta["module"], meta["step"], groups["param"], adam, meta["config"], version)


def checkpoint_name(module: str, step: int) -> str:
    return f"{module}_step{step:07d}.emtt"


def latest_checkpoint(directory, module: str) -> Path | None:
    found = sorted(Path(directory).glob(f"{module}_step*.emtt"))
    return found[-1] if found else None


def checkpoint_schedule(max_steps: int, every: int, start: int = 0) -> list[int]:
    """Steps after which a checkpoint is written: every multiple of ``every`` plus the last."""
    steps = [s for s in range(every, max_steps + 1, every) if s > start]
    if not steps or steps[-1] != max_steps:
        steps.append(max_steps)
    return steps


# ---------------------------------------------------------------------------
# batches


@dataclass
class SsrnCrop:
    coarse: np.ndarray      # (80, crop_T / 4)
    full: np.ndarray        # (513, crop_T)
    mask: np.ndarray        # (crop_T,) True on real frames
    start: int              # full-rate start frame


def sample_ssrn_crop(coarse: np.ndarray, full: np.ndarray, crop_T: int = 64,
                     rng: np.random.Generator | None = None, reduction: int = 4) -> SsrnCrop:
    """Random aligned window: full frames ``[s, s + crop_T)`` with ``s`` divisible by 4.

    Clips shorter than ``crop_T`` are zero-padded; the mask marks padding.
    """
    if crop_T % reduction:
        raise ValueError(f"crop_T={crop_T} must be a multiple of {reduction}")
    length = full.shape[1]
    if coarse.shape[1] * reduction != length:
        raise ValueError(f"coarse ({coarse.shape[1]} frames) and full ({length} frames) "
                         f"are not aligned at reduction {reduction}")
    ct = crop_T // reduction
    if length >= crop_T:
        rng = rng if rng is not None else np.random.default_rng(0)
        start = reduction * int(rng.integers(0, (length - crop_T) // reduction + 1))
        c0 = start // reduction
        return SsrnCrop(coarse[:, c0:c0 + ct].copy(), full[:, start:start + crop_T].copy(),
                        np.ones(crop_T, dtype=bool), start)
    c = np.zeros((coarse.shape[0], ct))
    f = np.zeros((full.shape[0], crop_T))
    c[:, :coarse.shape[1]] = coarse
    f[:, :length] = full
    return SsrnCrop(c, f, np.arange(crop_T) < length, 0)


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


def choose_batch(n: int, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    if batch_size >= n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=batch_size, replace=False))


def batch_diagonality(attention: np.ndarray, text_lengths, frame_lengths) -> float:
    """Mean diagonality over the unpadded region of each attention matrix."""
    scores = [attention_diagonality(a[:n, :t]) for a, n, t in
              zip(attention, text_lengths, frame_lengths)]
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    step: int
    checkpoints: list
    metrics_path: Path
    history: list = field(default_factory=list)


def _metric_columns(cfg: TrainConfig) -> list[str]:
    cols = ["step", "hiera"]
    if cfg.module == "t2s":
        cols += ["attn", "diagonality"]
    if not cfg.deterministic:
        cols.append("wall_ms")
    return cols


def _fmt(v) -> str:
    if isinstance(v, int):
        return str(v)
    return "nan" if v is None else repr(float(v))


def read_metrics(path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    cols = lines[0].split("\t")
    rows = []
    for line in lines[1:]:
        vals = line.split("\t")
        rows.append({c: (int(v) if c == "step" else float(v)) for c, v in zip(cols, vals)})
    return rows


def _augment_item(item, module: str, policy: AugmentPolicy, rng: np.random.Generator):
    if module == "t2s":
        tokens, coarse = item
        # the t2s stage never sees the full spectrogram; a one-row stand-in keeps augment_pair happy
        stand_in = np.zeros((1, coarse.shape[1] * 4))
        return tokens, augment_pair(coarse, stand_in, policy, rng)[0]
    return augment_pair(*item, policy, rng)


def train_loop(cfg: TrainConfig, corpus: CorpusIndex, out_dir, resume=None,
               snapshot: dict | None = None, step_hook=None,
               policy: AugmentPolicy | None = None) -> TrainResult:
    """Train ``cfg.module`` for ``cfg.max_steps`` steps, checkpointing into ``out_dir``.

    ``resume`` is a checkpoint path (or ``True`` for the newest one in
    ``out_dir``). Metrics go to ``metrics.tsv``, one row per step; in
    deterministic mode wall-clock times go to ``timing.tsv`` instead so the
    metrics file is reproducible byte for byte. ``step_hook(step, row)``
    is called after every step. With ``cfg.augment_on_the_fly`` every batch
    item is replaced by a fresh ``policy`` variant drawn from the step RNG.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = corpus.split(cfg.use_split)
    if not entries:
        raise ValueError(f"corpus split {cfg.use_split!r} is empty")
    if cfg.module == "t2s":
        data = [(list(e.tokens), e.load_coarse()) for e in entries]
        bins = {"mel": data[0][1].shape[0], "full": entries[0].load_full().shape[0]}
    else:
        data = [(e.load_coarse(), e.load_full()) for e in entries]
        bins = {"mel": data[0][0].shape[0], "full": data[0][1].shape[0]}
    config = {"train": asdict(cfg), "vocab": list(corpus.vocab.symbols), "bins": bins}
    if cfg.augment_on_the_fly:
        policy = policy or AugmentPolicy(n_mels=bins["mel"])
        policy.validate()
        config["augment"] = asdict(policy)
    if snapshot:
        config.update(snapshot)

    mcfg, params = init_model(cfg, len(corpus.vocab), bins)
    adam = AdamState()
    start = 0
    if resume:
        path = latest_checkpoint(out_dir, cfg.module) if resume is True else Path(resume)
        if path is None:
            raise CheckpointError(f"no {cfg.module} checkpoint to resume in {out_dir}")
        ckpt = load_checkpoint(path)
        if ckpt.module != cfg.module:
            raise CheckpointError(f"{path} holds a {ckpt.module} model, not {cfg.module}")
        params, adam, start = ckpt.parameters(), ckpt.adam, ckpt.step
        for name, shape in ((n, p.data.shape) for n, p in init_model(cfg, len(corpus.vocab), bins)[1].items()):
            if name not in params or params[name].data.shape != shape:
                raise CheckpointError(f"{path} does not match the configured model ({name})")

    cols = _metric_columns(cfg)
    metrics_path = out_dir / "metrics.tsv"
    timing_path = out_dir / "timing.tsv"
    kept = [line for line in (metrics_path.read_text().splitlines()[1:] if start and metrics_path.exists() else [])
            if int(line.split("\t")[0]) <= start]
    metrics = open(metrics_path, "w")
    metrics.write("\t".join(cols) + "\n" + "".join(line + "\n" for line in kept))
    timing = None
    if cfg.deterministic:
        timing = open(timing_path, "a" if start else "w")
        if not start:
            timing.write("step\twall_ms\n")

    schedule = set(checkpoint_schedule(cfg.max_steps, cfg.checkpoint_every, start))
    written = []
    last = latest_checkpoint(out_dir, cfg.module) if start else None
    history = []

    def save(step):
        ck = Checkpoint(cfg.module, step, {n: p.data for n, p in params.items()}, adam, config)
        path = save_checkpoint(out_dir / checkpoint_name(cfg.module, step), ck)
        written.append(path)
        return path

    try:
        for step in range(start + 1, cfg.max_steps + 1):
            rng = step_rng(cfg.seed, step)
            t0 = time.perf_counter()
            pick = choose_batch(len(data), cfg.batch_size, rng)
            drop_rng = rng if cfg.dropout > 0 else None
            items = [data[i] for i in pick]
            if cfg.augment_on_the_fly:
                items = [_augment_item(it, cfg.module, policy, rng) for it in items]
            try:
                if cfg.module == "t2s":
                    batch = make_t2s_batch(items)
                    hiera, attn, out = t2s_train_step(batch, params, adam, mcfg, cfg, drop_rng,
                                                      cfg.guided_attention)
                    diag = batch_diagonality(out.attention.data, batch.text_lengths,
                                             batch.frame_lengths)
                    row = {"step": step, "hiera": hiera, "attn": attn, "diagonality": diag}
                else:
                    crops = [sample_ssrn_crop(*it, cfg.crop_T, rng) for it in items]
                    coarse = np.stack([c.coarse for c in crops])
                    full = np.stack([c.full for c in crops])
                    mask = np.stack([c.mask for c in crops])[:, None, :]
                    hiera = ssrn_train_step(coarse, full, mask, params, adam, mcfg, cfg, drop_rng)
                    row = {"step": step, "hiera": hiera}
            except NonFiniteGradientError as exc:
                raise TrainingAborted(step, str(exc), last) from exc
            if not all(math.isfinite(v) for k, v in row.items() if k != "step" and v is not None):
                raise TrainingAborted(step, f"non-finite loss {row}", last)
            wall = (time.perf_counter() - t0) * 1000.0
            if not cfg.deterministic:
                row["wall_ms"] = wall
            else:
                timing.write(f"{step}\t{wall:.3f}\n")
            metrics.write("\t".join(_fmt(row.get(c)) for c in cols) + "\n")
            history.append(row)
            if step_hook is not None:
                step_hook(step, row)
            if step in schedule:
                metrics.flush()
                last = save(step)
    finally:
        metrics.close()
        if timing is not None:
            timing.close()
    return TrainResult(cfg.max_steps, written, metrics_path, history)
