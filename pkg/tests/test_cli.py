import subprocess
import sys

import numpy as np
import pytest

from emtts.cli import main
from emtts.t2s import T2SConfig
from emtts.toy import TEXTS
from emtts.train import load_checkpoint
from pipeline import run_pipeline


@pytest.fixture(scope="module")
def small_run(toy_root, tmp_path_factory):
    return run_pipeline(toy_root, tmp_path_factory.mktemp("cli"), t2s_steps=3, ssrn_steps=3,
                        utterances=TEXTS[:2])


def test_pipeline_outputs(small_run):
    for d in ("corpus", "t2s", "ssrn", "syn", "eval"):
        assert (small_run / d / "config.toml").exists(), d
    rows = (small_run / "eval" / "metrics.tsv").read_text().splitlines()
    assert rows[0] == "pair_id\tmcd_db\tf0_pcc\tframes_aligned"
    assert [r.split("\t")[0] for r in rows[1:]] == ["toy001", "toy002"]
    assert all(float(r.split("\t")[1]) > 0 for r in rows[1:])


def test_info_reports_exact_parameter_count(small_run, capsys):
    ck = small_run / "t2s" / "t2s_step0000003.emtt"
    assert main(["info", "--checkpoint", str(ck)]) == 0
    out = dict(line.split("\t", 1) for line in capsys.readouterr().out.splitlines())
    vocab = len(load_checkpoint(ck).vocab)
    shapes = T2SConfig(vocab_size=vocab, e=16, d=16).param_shapes().values()
    assert int(out["parameters"]) == sum(int(np.prod(s)) for s in shapes)
    assert out["module"] == "t2s" and out["step"] == "3"


def test_train_uses_corpus_dsp(small_run):
    ck = load_checkpoint(small_run / "ssrn" / "ssrn_step0000003.emtt")
    assert ck.config["dsp"]["n_fft"] == 1024 and ck.config["train"]["ssrn_c"] == 8


def test_gradcheck_command(tmp_path, capsys):
    assert main(["gradcheck", "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "t2s_full_loss" in text and "all 11 blocks below 0.0001" in text
    assert (tmp_path / "gradcheck.tsv").exists()


def test_missing_corpus_names_path(tmp_path, capsys):
    code = main(["train", "--corpus", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert code == 1 and err.startswith("error: corpus:") and "nowhere" in err


@pytest.mark.parametrize("argv", [["frobnicate"], ["train", "--bogus-flag", "1"], []])
def test_usage_errors_exit_2(argv):
    assert main(argv) == 2


def test_missing_out_is_usage_error(toy_root, capsys):
    code = main(["prepare", "--metadata", str(toy_root / "metadata.tsv"), "--wav-dir",
                 str(toy_root / "wavs")])
    assert code == 2 and "--out" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    (tmp_path / "c.toml").write_text("colour = 3\n")
    assert main(["gradcheck", "--config", str(tmp_path / "c.toml")]) == 1
    assert "error: config:" in capsys.readouterr().err


def test_unknown_symbol_in_text(small_run, capsys):
    code = main(["synth", "--text", "xyz", "--t2s", str(small_run / "t2s" / "t2s_step0000003.emtt"),
                 "--ssrn", str(small_run / "ssrn" / "ssrn_step0000003.emtt"),
                 "--out", str(small_run / "bad")])
    assert code == 1 and "error: text:" in capsys.readouterr().err


def test_bad_thread_setting(monkeypatch):
    monkeypatch.setenv("EMTTS_THREADS", "zero")
    assert main(["info", "--checkpoint", "x"]) == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "emtts", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "prepare" in proc.stdout
