from dataclasses import asdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emtts.autodiff import Parameter
from emtts.dsp import DspConfig, load_wav
from emtts.formats import read_emsp, read_pgm
from emtts.optim import AdamState
from emtts.synth import SynthOptions, decode_coarse, forced_attention_column, synth_utterance
from emtts.t2s import T2SConfig
from emtts.train import Checkpoint, CheckpointError, TrainConfig, init_model

CFG = T2SConfig(vocab_size=9, e=8, d=8, n_mels=6)


def random_params(cfg, seed=0, scale=0.4):
    rng = np.random.default_rng(seed)
    return {n: Parameter(n, rng.normal(0, scale, s)) for n, s in cfg.param_shapes().items()}


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_incremental_matches_prefix_decoding(seed):
    params = random_params(CFG, seed)
    ids = [2, 5, 3, 7, 4, 1]
    for forced in (True, False):
        a = decode_coarse(ids, params, CFG, SynthOptions(max_frames=30, forced_attention=forced))
        b = decode_coarse(ids, params, CFG, SynthOptions(max_frames=30, forced_attention=forced,
                                                          incremental=True))
        assert a.frames == b.frames and a.trajectory == b.trajectory
        np.testing.assert_allclose(a.mel, b.mel, rtol=0, atol=1e-6)
        np.testing.assert_allclose(a.attention, b.attention, rtol=0, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 11), st.integers(0, 3), st.integers(1, 4), st.integers(0, 999))
def test_forced_column_stays_in_window(n, prev, back, forward, seed):
    prev = prev % n
    scores = np.random.default_rng(seed).normal(size=n) * 5
    a = forced_attention_column(scores, prev, back, forward)
    lo, hi = max(0, prev - back), min(n, prev + forward + 1)
    assert abs(a.sum() - 1) < 1e-12 and not a[:lo].any() and not a[hi:].any()


def test_forced_column_rejects_bad_position():
    with pytest.raises(ValueError):
        forced_attention_column(np.zeros(3), 3)


@pytest.mark.parametrize("seed", range(4))
def test_forced_trajectory_moves_within_window(seed):
    res = decode_coarse([2, 3, 4, 5, 6, 7, 8, 1], random_params(CFG, seed), CFG,
                        SynthOptions(max_frames=40, window_back=1, window_forward=3))
    traj = [0] + res.trajectory
    assert all(-1 <= b - a <= 3 for a, b in zip(traj, traj[1:]))


@pytest.mark.parametrize("seed", range(4))
def test_stop_rule(seed):
    ids = [2, 3, 4, 5, 1]
    opts = SynthOptions(max_frames=60, dwell=4)
    res = decode_coarse(ids, random_params(CFG, seed), CFG, opts)
    at_end = [p >= len(ids) - 2 for p in res.trajectory]
    if res.truncated:
        assert res.frames == 60
    else:
        assert all(at_end[-4:]) and res.frames < 60
        # no earlier run of four
        runs = [all(at_end[i:i + 4]) for i in range(res.frames - 4)]
        assert not any(runs)


def test_two_symbol_text_stops_after_dwell():
    res = decode_coarse([3, 1], random_params(CFG), CFG, SynthOptions(dwell=5))
    assert res.frames == 5 and not res.truncated


def test_frame_cap_marks_truncation():
    res = decode_coarse([2, 3, 4, 5, 6, 1], random_params(CFG), CFG,
                        SynthOptions(max_frames=3, dwell=50))
    assert res.truncated and res.frames == 3 and res.mel.shape == (6, 3)
    assert np.all((res.mel >= 0) & (res.mel <= 1))


def test_options_validation():
    for bad in ({"max_frames": 0}, {"window_forward": 0}, {"dwell": 0}):
        with pytest.raises(ValueError):
            SynthOptions(**bad)


def _untrained(module, vocab, **kw):
    cfg = TrainConfig(module=module, e=8, d=8, ssrn_c=4, **kw)
    _, params = init_model(cfg, len(vocab))
    config = {"train": asdict(cfg), "vocab": vocab, "bins": {"mel": 80, "full": 513},
              "dsp": DspConfig().__dict__}
    return Checkpoint(module, 0, {n: p.data for n, p in params.items()}, AdamState(), config)


def test_synth_utterance_writes_artifacts(tmp_path):
    vocab = ["<pad>", "<eos>", " ", "a", "b"]
    t2s, ssrn = _untrained("t2s", vocab), _untrained("ssrn", vocab)
    res = synth_utterance("ab a", t2s, ssrn, opts=SynthOptions(max_frames=12), out_dir=tmp_path,
                          stem="x")
    assert res.full.shape == (513, 4 * res.coarse.shape[1])
    assert len(load_wav(tmp_path / "x.wav").samples) == 256 * res.full.shape[1]
    assert read_emsp(tmp_path / "x.coarse.emsp").shape == res.coarse.shape
    assert read_pgm(tmp_path / "x.attention.pgm").shape == res.attention.shape
    with pytest.raises(CheckpointError):
        synth_utterance("ab", ssrn, t2s)
    with pytest.raises(CheckpointError):
        synth_utterance("ab", t2s, ssrn, DspConfig(hop=128))
