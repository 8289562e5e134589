"""Corpus ingestion, feature caching and the manifest.

``build_corpus`` reads ``id<TAB>transcript`` rows, computes the spectrogram
pair for ``<wav_dir>/<id>.wav`` and caches it as EMSP files. The manifest
(``manifest.tsv``) and the vocabulary (``vocab.json``) sit next to the
cache files.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dsp import DspConfig, WavFormatError, load_wav, spectrogram_pair
from .formats import CacheFormatError, file_sha256, read_emsp, read_emsp_header, write_emsp
from .text import Vocabulary, normalize_text

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["id", "transcript", "tokens", "split", "coarse_path", "full_path",
                    "augmented_from"]


class CorpusError(ValueError):
    pass


@dataclass
class RowError:
    line: int
    uid: str
    reason: str

    def __str__(self) -> str:
        return f"line {self.line} ({self.uid or '?'}): {self.reason}"


@dataclass
class CorpusEntry:
    uid: str
    transcript: str
    tokens: list
    split: str = "train"
    coarse_path: Path | None = None
    full_path: Path | None = None
    augmented_from: str = ""
    coarse: np.ndarray | None = field(default=None, repr=False)
    full: np.ndarray | None = field(default=None, repr=False)

    def load_coarse(self) -> np.ndarray:
        return self.coarse if self.coarse is not None else read_emsp(self.coarse_path)

    def load_full(self) -> np.ndarray:
        return self.full if self.full is not None else read_emsp(self.full_path)


@dataclass
class CorpusIndex:
    entries: list
    vocab: Vocabulary
    root: Path | None = None
    errors: list = field(default_factory=list)
    computed: int = 0
    reused: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def copy(self) -> "CorpusIndex":
        return replace(self, entries=list(self.entries), errors=list(self.errors))

    def split(self, name: str) -> list:
        if name == "all":
            return list(self.entries)
        return [e for e in self.entries if e.split == name]

    def by_id(self, uid: str) -> CorpusEntry:
        for e in self.entries:
            if e.uid == uid:
                return e
        raise KeyError(uid)

    # manifest ---------------------------------------------------------------
    def save(self, root=None) -> Path:
        root = Path(root or self.root)
        root.mkdir(parents=True, exist_ok=True)
        rows = ["\t".join(MANIFEST_COLUMNS)]
        for e in self.entries:
            if e.coarse_path is None or e.full_path is None:
                raise CorpusError(f"entry {e.uid} has no cache files; write them before saving")
            rows.append("\t".join([
                e.uid, e.transcript, " ".join(map(str, e.tokens)), e.split,
                _rel(e.coarse_path, root), _rel(e.full_path, root), e.augmented_from]))
        (root / "manifest.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
        (root / "vocab.json").write_text(json.dumps(self.vocab.symbols, ensure_ascii=False),
                                         encoding="utf-8")
        self.root = root
        return root / "manifest.tsv"

    @classmethod
    def load(cls, root, check: bool = True) -> "CorpusIndex":
        root = Path(root)
        manifest = root / "manifest.tsv"
        if not manifest.exists():
            raise CorpusError(f"no corpus manifest at {manifest}")
        vocab = Vocabulary(json.loads((root / "vocab.json").read_text(encoding="utf-8")))
        lines = manifest.read_text(encoding="utf-8").splitlines()
        if not lines or lines[0].split("\t") != MANIFEST_COLUMNS:
            raise CorpusError(f"{manifest}: unexpected header")
        entries = []
        for line in lines[1:]:
            if not line:
                continue
            uid, text, toks, split, cpath, fpath, src = line.split("\t")
            entry = CorpusEntry(uid, text, [int(t) for t in toks.split()], split,
                                root / cpath, root / fpath, src)
            if check:
                for p in (entry.coarse_path, entry.full_path):
                    if not p.exists():
                        raise CorpusError(f"missing cache file {p}")
                    read_emsp_header(p)
            entries.append(entry)
        return cls(entries, vocab, root)


def _rel(path: Path, root: Path) -> str:
    path = Path(path)
    try:
        return str(path.resolve().relative_to(root.resolve()))
    except ValueError:
        return str(path.resolve())


def split_by_hash(uids: list, val_fraction: float = 0.2) -> dict:
    """Rank ids by SHA-1 and send the first ``round(val_fraction * n)`` to validation."""
    ranked = sorted(uids, key=lambda u: hashlib.sha1(u.encode("utf-8")).hexdigest())
    n_val = int(round(val_fraction * len(uids)))
    val = set(ranked[:n_val])
    return {u: ("val" if u in val else "train") for u in uids}


def read_metadata(path) -> tuple[list, list]:
    """Parse ``id<TAB>transcript`` rows; returns (rows, row errors)."""
    rows, errors, seen = [], [], set()
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) != 2:
            errors.append(RowError(lineno, parts[0] if parts else "", "expected id<TAB>transcript"))
            continue
        uid, text = parts[0].strip(), normalize_text(parts[1])
        if not uid:
            errors.append(RowError(lineno, "", "empty id"))
        elif uid in seen:
            errors.append(RowError(lineno, uid, f"duplicated id {uid!r}"))
        elif not text:
            errors.append(RowError(lineno, uid, "empty transcript"))
        else:
            seen.add(uid)
            rows.append((lineno, uid, text))
    return rows, errors


def build_corpus(metadata, wav_dir, cfg: DspConfig = DspConfig(), out_dir=None,
                 strict: bool = False, denoised_dir=None, val_fraction: float = 0.2,
                 threads: int | None = None) -> CorpusIndex:
    """Compute and cache spectrogram pairs for every usable metadata row.

    Files from ``denoised_dir`` (externally denoised audio with the same
    names) take precedence over ``wav_dir``. Cached features are reused
    when the source WAV checksum is unchanged.
    """
    wav_dir = Path(wav_dir)
    out_dir = Path(out_dir) if out_dir is not None else Path(metadata).parent / "cache"
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    rows, errors = read_metadata(metadata)
    sources = {}
    usable = []
    for lineno, uid, text in rows:
        src = None
        if denoised_dir is not None and (Path(denoised_dir) / f"{uid}.wav").exists():
            src = Path(denoised_dir) / f"{uid}.wav"
        elif (wav_dir / f"{uid}.wav").exists():
            src = wav_dir / f"{uid}.wav"
        if src is None:
            errors.append(RowError(lineno, uid, f"missing WAV {wav_dir / (uid + '.wav')}"))
            continue
        sources[uid] = src
        usable.append((lineno, uid, text))
    vocab = Vocabulary.from_texts([t for _, _, t in usable])
    splits = split_by_hash([u for _, u, _ in usable], val_fraction)
    stamp_path = out_dir / "sources.json"
    stamps = json.loads(stamp_path.read_text()) if stamp_path.exists() else {}
    cfg_key = json.dumps(cfg.__dict__, sort_keys=True)

    def work(item):
        lineno, uid, text = item
        cpath, fpath = feat_dir / f"{uid}.coarse.emsp", feat_dir / f"{uid}.full.emsp"
        digest = file_sha256(sources[uid])
        stamp = {"wav": digest, "dsp": cfg_key}
        if stamps.get(uid) == stamp and cpath.exists() and fpath.exists():
            try:
                read_emsp_header(cpath)
                read_emsp_header(fpath)
                return uid, stamp, False, None
            except CacheFormatError:
                pass
        try:
            coarse, full = spectrogram_pair(load_wav(sources[uid], cfg.sample_rate), cfg)
        except (WavFormatError, ValueError) as exc:
            return uid, None, False, RowError(lineno, uid, str(exc))
        write_emsp(cpath, coarse)
        write_emsp(fpath, full)
        return uid, stamp, True, None

    n_threads = threads or int(os.environ.get("EMTTS_THREADS", 0)) or os.cpu_count() or 1
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        results = list(pool.map(work, usable))
    entries, computed, reused = [], 0, 0
    new_stamps = {}
    for (lineno, uid, text), (_, stamp, fresh, err) in zip(usable, results):
        if err is not None:
            errors.append(err)
            continue
        new_stamps[uid] = stamp
        computed += fresh
        reused += not fresh
        entries.append(CorpusEntry(uid, text, vocab.encode(text), splits[uid],
                                   feat_dir / f"{uid}.coarse.emsp", feat_dir / f"{uid}.full.emsp"))
    stamp_path.write_text(json.dumps(new_stamps, sort_keys=True, indent=0))
    errors.sort(key=lambda e: e.line)
    for err in errors:
        logger.warning("unusable row: %s", err)
    if strict and errors:
        raise CorpusError(f"{len(errors)} unusable rows; first: {errors[0]}")
    if not entries:
        raise CorpusError("no usable rows in corpus")
    index = CorpusIndex(entries, vocab, out_dir, errors, computed, reused)
    index.save(out_dir)
    return index
