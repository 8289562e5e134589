import shutil

import numpy as np
import pytest

from emtts.corpus import CorpusError, CorpusIndex, build_corpus, read_metadata, split_by_hash
from emtts.dsp import Waveform, write_wav
from emtts.toy import TEXTS


def test_toy_corpus_shapes(toy_corpus):
    assert len(toy_corpus) == len(TEXTS)
    for e in toy_corpus.entries:
        c, f = e.load_coarse(), e.load_full()
        assert c.shape[0] == 80 and f.shape == (513, 4 * c.shape[1])
        assert e.tokens[-1] == toy_corpus.vocab.eos_id
        assert toy_corpus.vocab.decode(e.tokens) == e.transcript
    assert {e.split for e in toy_corpus.entries} == {"train", "val"}
    assert len(toy_corpus.split("all")) == len(TEXTS)


def test_split_is_stable_and_sized():
    uids = [f"u{i}" for i in range(50)]
    a, b = split_by_hash(uids, 0.2), split_by_hash(list(reversed(uids)), 0.2)
    assert a == b and sum(v == "val" for v in a.values()) == 10


def test_metadata_row_errors(tmp_path):
    (tmp_path / "m.tsv").write_text("a\thello\nbroken\nb\t \na\tagain\n\nc\tok\n")
    rows, errors = read_metadata(tmp_path / "m.tsv")
    assert [r[1] for r in rows] == ["a", "c"]
    assert [(e.line, e.reason.split()[0]) for e in errors] == [(2, "expected"), (3, "empty"),
                                                               (4, "duplicated")]


def test_build_reports_missing_and_bad_wavs(tmp_path, toy_root):
    wavs = tmp_path / "wavs"
    wavs.mkdir()
    shutil.copy(toy_root / "wavs" / "toy001.wav", wavs)
    (wavs / "bad.wav").write_bytes(b"junk")
    (tmp_path / "m.tsv").write_text("toy001\tabc defg\nbad\tab\nghost\tcd\n")
    index = build_corpus(tmp_path / "m.tsv", wavs, out_dir=tmp_path / "cache", threads=1)
    assert [e.uid for e in index.entries] == ["toy001"]
    assert [e.uid for e in index.errors] == ["bad", "ghost"]
    with pytest.raises(CorpusError):
        build_corpus(tmp_path / "m.tsv", wavs, out_dir=tmp_path / "cache2", strict=True, threads=1)


def test_cache_reuse_and_invalidation(tmp_path, toy_root):
    wavs = tmp_path / "wavs"
    shutil.copytree(toy_root / "wavs", wavs)
    meta = toy_root / "metadata.tsv"
    first = build_corpus(meta, wavs, out_dir=tmp_path / "cache", threads=2)
    again = build_corpus(meta, wavs, out_dir=tmp_path / "cache", threads=2)
    assert first.computed == len(TEXTS) and again.reused == len(TEXTS) and again.computed == 0
    write_wav(wavs / "toy003.wav", Waveform(np.zeros(8000)), bits=32)
    third = build_corpus(meta, wavs, out_dir=tmp_path / "cache", threads=2)
    assert third.computed == 1 and not third.by_id("toy003").load_full().any()


def test_denoised_files_take_precedence(tmp_path, toy_root):
    den = tmp_path / "den"
    den.mkdir()
    write_wav(den / "toy002.wav", Waveform(np.zeros(6000)), bits=32)
    index = build_corpus(toy_root / "metadata.tsv", toy_root / "wavs", out_dir=tmp_path / "c",
                         denoised_dir=den, threads=1)
    assert not index.by_id("toy002").load_coarse().any()
    assert index.by_id("toy001").load_coarse().any()


def test_manifest_round_trip(toy_corpus):
    back = CorpusIndex.load(toy_corpus.root)
    assert [(e.uid, e.tokens, e.split) for e in back.entries] == \
        [(e.uid, e.tokens, e.split) for e in toy_corpus.entries]
    assert back.vocab.symbols == toy_corpus.vocab.symbols


def test_load_missing_manifest(tmp_path):
    with pytest.raises(CorpusError):
        CorpusIndex.load(tmp_path)
