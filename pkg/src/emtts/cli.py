"""``emtts`` command line: corpus preparation, training, synthesis and evaluation.

Every subcommand takes ``--config PATH`` (flat TOML), ``--seed N`` and
``--out DIR``; any configuration key relevant to the subcommand can also be
given as a flag (``--max_steps 200`` or ``--max-steps 200``). The merged
configuration is echoed as ``config.toml`` into each output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from . import config as cfgmod
from .config import CliConfig, ConfigError
from .corpus import CorpusError, CorpusIndex, build_corpus
from .dsp import DspConfig, WavFormatError, load_wav
from .formats import CacheFormatError
from .metrics import UndefinedCorrelation, f0_pcc, mcd_detail
from .text import UnknownSymbolError
from .train import CheckpointError, TrainingAborted, load_checkpoint

logger = logging.getLogger("emtts")

# config sections whose keys become flags of each subcommand
SUBCOMMAND_SECTIONS = {
    "prepare": ("dsp", "corpus"),
    "augment": ("augment",),
    "train": ("train",),
    "synth": ("synth", "dsp"),
    "eval": ("dsp",),
    "gradcheck": (),
    "info": (),
}

ERROR_KINDS = [
    (ConfigError, "config"),
    (CorpusError, "corpus"),
    (CheckpointError, "checkpoint"),
    (TrainingAborted, "training"),
    (WavFormatError, "wav"),
    (CacheFormatError, "cache"),
    (UnknownSymbolError, "text"),
    (FileNotFoundError, "io"),
    (OSError, "io"),
    (ValueError, "value"),
]


class CommandError(RuntimeError):
    def __init__(self, kind: str, message: str):
        self.kind = kind
        super().__init__(message)


def _config_flags(parser: argparse.ArgumentParser, sections) -> None:
    spec = cfgmod.schema()
    group = parser.add_argument_group("configuration keys")
    for key, (typ, default, owners) in sorted(spec.items()):
        if key == "seed" or not set(owners) & set(sections):
            continue
        names = [f"--{key}"] + ([f"--{key.replace('_', '-')}"] if "_" in key else [])
        shown = ",".join(map(str, default)) if isinstance(default, tuple) else default
        group.add_argument(*names, dest=f"cfg_{key}", default=None, metavar=typ.__name__.upper(),
                           help=f"default {shown}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat TOML configuration file")
    common.add_argument("--seed", type=int, help="seed for every random draw")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="emtts", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("prepare", parents=[common], help="compute and cache spectrograms")
    p.add_argument("--metadata", type=Path, required=True, help="id<TAB>transcript file")
    p.add_argument("--wav-dir", type=Path, required=True)
    p.add_argument("--denoised-dir", type=Path, help="pre-denoised WAVs overriding --wav-dir")
    p.add_argument("--strict", action="store_true", help="fail on any unusable row")

    p = sub.add_parser("augment", parents=[common], help="expand a prepared corpus")
    p.add_argument("--corpus", type=Path, required=True, help="prepared corpus directory")

    p = sub.add_parser("train", parents=[common], help="train the t2s or ssrn module")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--resume", nargs="?", const=True, default=None, metavar="CHECKPOINT",
                   help="continue from CHECKPOINT or the newest one in --out")

    p = sub.add_parser("synth", parents=[common], help="synthesize a waveform from text")
    p.add_argument("--text", required=True)
    p.add_argument("--t2s", type=Path, required=True, help="t2s checkpoint")
    p.add_argument("--ssrn", type=Path, required=True, help="ssrn checkpoint")
    p.add_argument("--stem", default="synth", help="artifact file name stem")

    p = sub.add_parser("eval", parents=[common], help="MCD and log-F0 PCC of WAV pairs")
    p.add_argument("--ref", type=Path, required=True, help="reference WAV or directory")
    p.add_argument("--syn", type=Path, required=True, help="synthesized WAV or directory")

    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient audit")

    p = sub.add_parser("info", parents=[common], help="describe a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)

    for name, sp in sub.choices.items():
        _config_flags(sp, SUBCOMMAND_SECTIONS[name])
    return parser


def _load_config(args) -> CliConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    if args.seed is not None:
        overrides["seed"] = args.seed
    return CliConfig.load(args.config, overrides)


def _need_out(args) -> Path:
    if args.out is None:
        raise CommandError("usage", f"{args.command} needs --out DIR")
    return args.out


def _corpus_dsp(corpus_dir: Path) -> dict | None:
    """DSP settings a prepared corpus was built with, from its echoed config."""
    path = corpus_dir / "config.toml"
    if not path.exists():
        return None
    values = CliConfig.load(path).dsp.__dict__
    return dict(values)


def cmd_prepare(args, cfg: CliConfig) -> None:
    out = _need_out(args)
    if not args.metadata.exists():
        raise CorpusError(f"metadata file not found: {args.metadata}")
    if not args.wav_dir.is_dir():
        raise CorpusError(f"WAV directory not found: {args.wav_dir}")
    index = build_corpus(args.metadata, args.wav_dir, cfg.dsp, out, strict=args.strict,
                         denoised_dir=args.denoised_dir, val_fraction=cfg.val_fraction)
    cfg.echo(out)
    for err in index.errors:
        print(f"skipped\t{err}")
    n_val = len(index.split("val"))
    print(f"prepared {len(index)} utterances ({len(index) - n_val} train, {n_val} val) in {out}; "
          f"computed {index.computed}, reused {index.reused}, skipped {len(index.errors)}")


def cmd_augment(args, cfg: CliConfig) -> None:
    from .augment import expand_corpus

    out = _need_out(args)
    corpus = CorpusIndex.load(args.corpus)
    expanded = expand_corpus(corpus, cfg.augment, cfg.seed, out / "features")
    expanded.save(out)
    cfg.echo(out)
    dsp = _corpus_dsp(args.corpus)
    if dsp is not None:
        # keep the source corpus' DSP settings visible to training
        text = (out / "config.toml").read_text()
        merged = {**cfgmod.tomllib.loads(text), **dsp}
        (out / "config.toml").write_text(cfgmod.dumps(merged))
    print(f"expanded {len(corpus)} -> {len(expanded)} utterances in {out}")


def cmd_train(args, cfg: CliConfig) -> None:
    from .train import train_loop

    out = _need_out(args)
    if not args.corpus.exists():
        raise CorpusError(f"corpus directory not found: {args.corpus}")
    corpus = CorpusIndex.load(args.corpus)
    tcfg = cfg.train
    dsp = _corpus_dsp(args.corpus) or cfg.dsp.__dict__
    cfg.echo(out)
    result = train_loop(tcfg, corpus, out, resume=args.resume, snapshot={"dsp": dsp},
                        policy=cfg.augment if tcfg.augment_on_the_fly else None)
    last = result.history[-1] if result.history else {}
    summary = " ".join(f"{k}={v:.6g}" for k, v in last.items() if k != "step")
    print(f"trained {tcfg.module} to step {result.step}" + (f": {summary}" if summary else ""))
    for path in result.checkpoints:
        print(f"checkpoint\t{path}")


def cmd_synth(args, cfg: CliConfig) -> None:
    from .synth import synth_utterance

    out = _need_out(args)
    t2s = load_checkpoint(args.t2s)
    explicit_dsp = any(getattr(args, f"cfg_{k}", None) is not None
                       for k, (_, _, owners) in cfgmod.schema().items() if "dsp" in owners)
    dsp = cfg.dsp
    if not explicit_dsp and "dsp" in t2s.config:
        dsp = DspConfig(**t2s.config["dsp"])
    result = synth_utterance(args.text, t2s, args.ssrn, dsp, cfg.synth, out, args.stem)
    cfg.echo(out)
    print(f"synthesized {result.coarse.shape[1]} coarse frames, "
          f"{result.waveform.duration:.3f} s" + (" (truncated at max_frames)" if result.truncated else ""))
    for kind, path in result.artifacts.items():
        print(f"{kind}\t{path}")


def _pairs(ref: Path, syn: Path) -> list:
    if ref.is_dir() != syn.is_dir():
        raise CommandError("usage", "--ref and --syn must both be files or both be directories")
    if not ref.is_dir():
        for p in (ref, syn):
            if not p.exists():
                raise FileNotFoundError(f"no such file: {p}")
        return [(ref.stem, ref, syn)]
    refs = {p.stem: p for p in sorted(ref.glob("*.wav"))}
    syns = {p.stem: p for p in sorted(syn.glob("*.wav"))}
    common = sorted(refs.keys() & syns.keys())
    if not common:
        raise CommandError("usage", f"no WAV names shared by {ref} and {syn}")
    for stem in sorted(refs.keys() ^ syns.keys()):
        logger.warning("unpaired WAV %s", stem)
    return [(s, refs[s], syns[s]) for s in common]


def cmd_eval(args, cfg: CliConfig) -> None:
    rows = ["pair_id\tmcd_db\tf0_pcc\tframes_aligned"]
    dsp = cfg.dsp
    for pid, ref_path, syn_path in _pairs(args.ref, args.syn):
        ref, syn = load_wav(ref_path, dsp.sample_rate), load_wav(syn_path, dsp.sample_rate)
        res = mcd_detail(ref, syn, dsp)
        try:
            pcc = f"{f0_pcc(ref, syn):.6f}"
        except UndefinedCorrelation:
            pcc = "undefined"
        rows.append(f"{pid}\t{res.mcd_db:.6f}\t{pcc}\t{res.frames_aligned}")
    text = "\n".join(rows) + "\n"
    sys.stdout.write(text)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "metrics.tsv").write_text(text)
        cfg.echo(args.out)


def cmd_gradcheck(args, cfg: CliConfig) -> None:
    from .gradcheck import TOLERANCE, run_suite

    results = run_suite(cfg.seed)
    lines = ["block\tmax_rel_error\tseconds"]
    lines += [f"{r.block}\t{r.max_rel_error:.3e}\t{r.seconds:.2f}" for r in results]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "gradcheck.tsv").write_text(text)
        cfg.echo(args.out)
    bad = [r.block for r in results if not r.ok]
    if bad:
        raise CommandError("gradcheck", f"relative error >= {TOLERANCE:g} in {', '.join(bad)}")
    print(f"all {len(results)} blocks below {TOLERANCE:g} "
          f"({sum(r.seconds for r in results):.1f} s)")


def cmd_info(args, cfg: CliConfig) -> None:
    ck = load_checkpoint(args.checkpoint)
    print(f"module\t{ck.module}")
    print(f"step\t{ck.step}")
    print(f"parameters\t{ck.n_params()}")
    print(f"format_version\t{ck.version}")
    print("config\t" + json.dumps(ck.config, sort_keys=True))


COMMANDS = {"prepare": cmd_prepare, "augment": cmd_augment, "train": cmd_train,
            "synth": cmd_synth, "eval": cmd_eval, "gradcheck": cmd_gradcheck, "info": cmd_info}


def _thread_limit():
    raw = os.environ.get("EMTTS_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"EMTTS_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"EMTTS_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _kind(exc: BaseException) -> str:
    for cls, kind in ERROR_KINDS:
        if isinstance(exc, cls):
            return kind
    return "internal"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        with _thread_limit():
            COMMANDS[args.command](args, cfg)
    except CommandError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return 2 if exc.kind == "usage" else 1
    except tuple(cls for cls, _ in ERROR_KINDS) as exc:
        print(f"error: {_kind(exc)}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
