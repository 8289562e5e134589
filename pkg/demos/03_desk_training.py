"""
Desk-scale training, synthesis and evaluation
=============================================

Overfit both stages on the five-utterance toy corpus, then synthesize
every transcript and score it against the training audio. With the
default step counts this takes a few minutes on a laptop CPU; pass
smaller ``--t2s-steps``/``--ssrn-steps`` for a quick look.
"""

import argparse
import logging
from pathlib import Path

from emtts.corpus import build_corpus
from emtts.dsp import load_wav
from emtts.metrics import UndefinedCorrelation, attention_diagonality, f0_pcc, mcd
from emtts.synth import synth_utterance
from emtts.toy import write_toy_corpus
from emtts.train import TrainConfig, load_checkpoint, train_loop

parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
parser.add_argument("--out", type=Path, default=Path("demo_desk"))
parser.add_argument("--t2s-steps", type=int, default=3000)
parser.add_argument("--ssrn-steps", type=int, default=1500)
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()
logging.basicConfig(level=logging.WARNING)

root = write_toy_corpus(args.out / "toy")
corpus = build_corpus(root / "metadata.tsv", root / "wavs", out_dir=args.out / "cache")


def report(step, row):
    if step % 250 == 0:
        extra = f" diag {row['diagonality']:.2f}" if "diagonality" in row else ""
        print(f"  step {step:5d} hiera {row['hiera']:.4f}{extra}", flush=True)


# small widths and a higher learning rate than the full-size defaults; no dropout while overfitting
t2s_cfg = TrainConfig(module="t2s", e=48, d=48, learning_rate=5e-4, dropout=0.0, batch_size=5,
                      max_steps=args.t2s_steps, checkpoint_every=args.t2s_steps,
                      use_split="all", seed=args.seed)
ssrn_cfg = TrainConfig(module="ssrn", ssrn_c=32, learning_rate=1e-3, dropout=0.0, batch_size=4,
                       max_steps=args.ssrn_steps, checkpoint_every=args.ssrn_steps,
                       use_split="all", seed=args.seed)
print("Text2Spectrum")
t2s = train_loop(t2s_cfg, corpus, args.out / "t2s", step_hook=report)
print("SSRN")
ssrn = train_loop(ssrn_cfg, corpus, args.out / "ssrn", step_hook=report)

t2s_ck = load_checkpoint(t2s.checkpoints[-1])
ssrn_ck = load_checkpoint(ssrn.checkpoints[-1])
print(f"parameters: t2s {t2s_ck.n_params()}, ssrn {ssrn_ck.n_params()}")

print("uid     frames  diag   MCD dB  F0 PCC")
for e in corpus.entries:
    res = synth_utterance(e.transcript, t2s_ck, ssrn_ck, out_dir=args.out / "syn", stem=e.uid)
    ref = load_wav(root / "wavs" / f"{e.uid}.wav")
    try:
        pcc = f"{f0_pcc(ref, res.waveform):.3f}"
    except UndefinedCorrelation:
        pcc = "n/a"
    diag = attention_diagonality(res.attention)
    print(f"{e.uid}  {res.coarse.shape[1]:6d}  {diag:.2f}  {mcd(ref, res.waveform):7.2f}  {pcc}")

print(f"waveforms and attention images in {args.out / 'syn'}")
