"""
Toy corpus, spectrogram features and augmentation
=================================================

Render the bundled synthetic corpus, compute the coarse mel / full
spectrogram pair for each clip and look at what each augmentation does to
one coarse mel. Images are written as PGM files under ``--out``.
"""

import argparse
from pathlib import Path

import numpy as np

from emtts import augment
from emtts.corpus import build_corpus
from emtts.formats import write_pgm
from emtts.toy import write_toy_corpus

parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
parser.add_argument("--out", type=Path, default=Path("demo_features"))
args = parser.parse_args()

root = write_toy_corpus(args.out / "toy")
corpus = build_corpus(root / "metadata.tsv", root / "wavs", out_dir=args.out / "cache")
for e in corpus.entries:
    coarse, full = e.load_coarse(), e.load_full()
    print(f"{e.uid} {e.transcript!r:14s} split={e.split:5s} coarse {coarse.shape} full {full.shape}")

# coarse frames are every 4th full-rate mel frame
entry = corpus.entries[0]
mel = entry.load_coarse()
write_pgm(args.out / "coarse.pgm", mel[::-1])

rng = np.random.default_rng(0)
variants = {
    "warp": augment.apply_time_warp(mel, mel.shape[1] // 2, 3),
    "freq_mask": augment.apply_freq_mask(mel, 30, 12),
    "time_mask": augment.apply_time_mask(mel, 5, 4),
    "resize_low": augment.spec_resize(mel, 0.8, "frequency"),
    "resize_slow": augment.spec_resize(mel, 1.25, "time"),
}
for name, v in variants.items():
    changed = np.mean(v != mel)
    print(f"{name:12s} changed {100 * changed:5.1f}% of cells")
    write_pgm(args.out / f"{name}.pgm", v[::-1])

# a sixfold expansion, as used to grow 1000 clips to 6000
policy = augment.AugmentPolicy(mask_F=10, mask_T=4, warp_W=2)
expanded = augment.expand_corpus(corpus, policy, seed=0, out_dir=args.out / "expanded")
print(f"expanded {len(corpus)} -> {len(expanded)} utterances")
