import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emtts.augment import (AugmentPolicy, apply_freq_mask, apply_time_mask, apply_time_warp,
                           augment_pair, expand_corpus, spec_resize, utterance_seed)
from emtts.corpus import CorpusEntry, CorpusIndex
from emtts.formats import file_sha256
from emtts.text import Vocabulary


def warp_oracle(s, anchor, w):
    t = s.shape[1]
    dest = anchor + w
    out = np.empty_like(s, dtype=float)
    for i in range(t):
        if i <= dest:
            src = i * anchor / dest
        else:
            src = anchor + (i - dest) * (t - 1 - anchor) / (t - 1 - dest)
        lo = int(np.floor(src))
        hi = min(lo + 1, t - 1)
        out[:, i] = s[:, lo] + (src - lo) * (s[:, hi] - s[:, lo])
    return out


def rand_spec(shape=(12, 30), seed=0):
    return np.random.default_rng(seed).uniform(size=shape)


# --- time warp --------------------------------------------------------------

def test_zero_warp_is_identity():
    s = rand_spec()
    assert np.array_equal(apply_time_warp(s, 10, 0, 5), s)


def test_hand_example_warp():
    out = apply_time_warp(np.arange(5.0)[None], 2, 1)
    np.testing.assert_allclose(out[0], [0, 2 / 3, 4 / 3, 2, 4], atol=1e-15)


@pytest.mark.parametrize("anchor,w", [(6, 3), (15, -5), (20, 4), (8, -2)])
def test_warp_matches_index_oracle(anchor, w):
    s = rand_spec(seed=anchor)
    np.testing.assert_allclose(apply_time_warp(s, anchor, w, 5), warp_oracle(s, anchor, w),
                               rtol=0, atol=1e-12)


def test_warp_keeps_ramp_monotone_and_endpoints():
    ramp = np.tile(np.linspace(0, 1, 30), (3, 1))
    out = apply_time_warp(ramp, 12, -4, 5)
    assert np.all(np.diff(out, axis=1) >= 0)
    assert np.array_equal(out[:, [0, -1]], ramp[:, [0, -1]])


@pytest.mark.parametrize("anchor,w", [(3, 1), (27, 1), (10, 6)])
def test_warp_out_of_range_rejected(anchor, w):
    with pytest.raises(ValueError):
        apply_time_warp(rand_spec(), anchor, w, 5)


# --- masks ------------------------------------------------------------------

def test_mask_examples():
    s = rand_spec((4, 6))
    f = apply_freq_mask(s, 2, 2)
    assert not f[2:].any() and np.array_equal(f[:2], s[:2])
    t = apply_time_mask(s, 1, 2)
    assert not t[:, 1:3].any()
    assert np.array_equal(t[:, [0, 3, 4, 5]], s[:, [0, 3, 4, 5]])
    assert np.array_equal(apply_freq_mask(s, 1, 0), s) and np.array_equal(apply_time_mask(s, 3, 0), s)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 11), st.integers(0, 12), st.integers(0, 29), st.integers(0, 30))
def test_masks_exact_and_idempotent(f0, f, t0, t):
    s = rand_spec()
    f, t = min(f, 12 - f0), min(t, 30 - t0)
    once = apply_time_mask(apply_freq_mask(s, f0, f), t0, t)
    keep = np.ones_like(s, dtype=bool)
    keep[f0:f0 + f] = False
    keep[:, t0:t0 + t] = False
    assert np.array_equal(once[keep], s[keep]) and not once[~keep].any()
    assert np.array_equal(apply_time_mask(apply_freq_mask(once, f0, f), t0, t), once)


def test_time_mask_energy_bookkeeping():
    s = np.full((5, 20), 0.7)
    out = apply_time_mask(s, 4, 6)
    assert (s.sum() - out.sum()) / s.sum() == pytest.approx(6 / 20, abs=1e-12)


def test_masks_out_of_range_rejected():
    s = rand_spec((4, 6))
    for bad in (lambda: apply_freq_mask(s, 3, 2), lambda: apply_freq_mask(s, -1, 1),
                lambda: apply_time_mask(s, 5, 2)):
        with pytest.raises(ValueError):
            bad()


# --- resize -----------------------------------------------------------------

def test_unit_ratio_identity():
    s = rand_spec()
    assert np.array_equal(spec_resize(s, 1.0, "frequency"), s)
    assert np.array_equal(spec_resize(s, 1.0, "time"), s)


def test_half_ratio_zero_fills_high_end():
    s = rand_spec((80, 10)) + 0.1
    out = spec_resize(s, 0.5, "frequency")
    assert out.shape == s.shape and not out[40:].any() and out[:40].min() > 0


def test_stretch_cuts_high_end():
    s = rand_spec((10, 40))
    out = spec_resize(s, 1.5, "time")
    assert out.shape == s.shape and out[:, -1].any()


def test_resize_round_trip_on_ramp():
    ramp = np.tile(np.linspace(0, 1, 80)[:, None], (1, 6))
    back = spec_resize(spec_resize(ramp, 2.0, "frequency"), 0.5, "frequency")
    assert np.abs(back[:40] - ramp[:40]).max() < 0.05


def test_resize_rejects_degenerate_ratios():
    for ratio in (0.0, -1.0, 0.01):
        with pytest.raises(ValueError):
            spec_resize(rand_spec((10, 10)), ratio)


# --- policy and pairs -------------------------------------------------------

@pytest.mark.parametrize("kw", [{"mask_F": 80}, {"warp_W": -1}, {"expansion_factor": 0},
                                {"resize_ratios": (1.0, -0.5)}])
def test_policy_validation(kw):
    with pytest.raises(ValueError):
        AugmentPolicy(**kw).validate()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**20), st.integers(12, 40))
def test_augment_pair_preserves_shape_and_range(seed, t):
    coarse, full = rand_spec((80, t), seed), rand_spec((20, 4 * t), seed + 1)
    c, f = augment_pair(coarse, full, AugmentPolicy(), np.random.default_rng(seed))
    assert c.shape == coarse.shape and f.shape == full.shape
    assert c.min() >= 0 and c.max() <= 1 and f.min() >= 0 and f.max() <= 1


def test_utterance_seed_depends_on_all_parts():
    draws = {utterance_seed(s, u, v).random() for s, u, v in
             [(0, "a", 1), (1, "a", 1), (0, "b", 1), (0, "a", 2)]}
    assert len(draws) == 4


# --- corpus expansion -------------------------------------------------------

def make_corpus(n, t=12, n_mels=20, seed=0):
    rng = np.random.default_rng(seed)
    vocab = Vocabulary.from_texts(["ab"])
    entries = [CorpusEntry(f"u{i:04d}", "ab", vocab.encode("ab"),
                           coarse=rng.uniform(size=(n_mels, t)), full=rng.uniform(size=(8, 4 * t)))
               for i in range(n)]
    return CorpusIndex(entries, vocab)


def test_sixfold_expansion_of_1000():
    corpus = make_corpus(1000, t=8)
    out = expand_corpus(corpus, AugmentPolicy(n_mels=20, mask_F=5, mask_T=3, warp_W=2), 0)
    assert len(out) == 6000 and len(corpus) == 1000
    aug = [e for e in out.entries if e.augmented_from]
    assert len(aug) == 5000
    src = {e.uid: e for e in corpus.entries}
    assert all(e.tokens == src[e.augmented_from].tokens for e in aug)


@pytest.mark.parametrize("factor", [1, 2, 3])
def test_expansion_count_is_exact(factor):
    corpus = make_corpus(7)
    out = expand_corpus(corpus, AugmentPolicy(n_mels=20, mask_F=5, expansion_factor=factor), 1)
    assert len(out) == factor * 7
    if factor == 1:
        assert out is corpus


def test_expansion_deterministic_cache(tmp_path):
    policy = AugmentPolicy(n_mels=20, mask_F=5, expansion_factor=3)
    sums = []
    for run in ("a", "b"):
        out = expand_corpus(make_corpus(4), policy, 11, tmp_path / run)
        sums.append([file_sha256(e.coarse_path) + file_sha256(e.full_path)
                     for e in out.entries if e.augmented_from])
    assert sums[0] == sums[1]
    other = expand_corpus(make_corpus(4), policy, 12, tmp_path / "c")
    assert [file_sha256(e.coarse_path) for e in other.entries if e.augmented_from] != \
        [s[:64] for s in sums[0]]


def test_expansion_rejects_empty_and_bad_policy():
    with pytest.raises(ValueError):
        expand_corpus(make_corpus(0), AugmentPolicy(n_mels=20, mask_F=5), 0)
    with pytest.raises(ValueError):
        expand_corpus(make_corpus(2), AugmentPolicy(n_mels=20, mask_F=25), 0)
