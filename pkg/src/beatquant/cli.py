"""Command-line interface.

Exit codes: 0 success, 1 input error, 2 validation failure, 3 training divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from .config import Config, load_config
from .ingest import AnnotationParseError, MidiParseError, parse_annotations, parse_midi
from .model.checkpoint import CheckpointError, load_checkpoint
from .musicxml import MusicXMLError
from .util import atomic_write_text

log = logging.getLogger("beatquant")

EXIT_OK, EXIT_INPUT, EXIT_VALIDATION, EXIT_DIVERGED = 0, 1, 2, 3
INPUT_ERRORS = (OSError, MidiParseError, AnnotationParseError, MusicXMLError, CheckpointError, yaml.YAMLError)


def parse_tpb(text: str | None) -> dict[str, int]:
    """``"6/8=18,12/8=18"`` to ``{"6/8": 18, "12/8": 18}``."""
    if not text:
        return {}
    out = {}
    for item in text.split(","):
        sig, _, value = item.partition("=")
        if not value:
            raise ValueError(f"bad --ticks-per-beat entry {item!r}, expected SIG=N")
        out[sig.strip()] = int(value)
    return out


def _config(args) -> Config:
    cfg = load_config(args.config)
    seq, grid, train = cfg.sequence, cfg.grid, cfg.train
    if getattr(args, "measures", None) is not None:
        seq = replace(seq, measures=args.measures)
    if getattr(args, "signatures", None):
        seq = replace(seq, signatures=[s.strip() for s in args.signatures.split(",")])
    if getattr(args, "ticks_per_beat", None):
        grid = replace(grid, ticks_per_beat={**grid.ticks_per_beat, **parse_tpb(args.ticks_per_beat)})
    if getattr(args, "seed", None) is not None:
        seq = replace(seq, seed=args.seed)
        train = replace(train, seed=args.seed)
    if getattr(args, "max_epochs", None) is not None:
        train = replace(train, max_epochs=args.max_epochs, patience=min(train.patience, max(args.max_epochs - 1, 0)))
    if getattr(args, "max_steps", None) is not None:
        train = replace(train, max_steps=args.max_steps)
    return replace(cfg, sequence=seq, grid=grid, train=train)


def cmd_synthesize(args) -> int:
    from .synth import SynthConfig, synthesize_corpus, write_corpus

    cfg = SynthConfig(pieces=args.pieces, measures=args.measures or 2, seed=args.seed or 0)
    dirs = write_corpus(synthesize_corpus(cfg), args.out)
    print(f"wrote {cfg.pieces} pieces to {', '.join(str(d) for d in dirs.values())}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    from .pipeline import prepare

    cfg = _config(args)
    manifest = prepare(args.scores, args.performances, args.annotations, args.out, cfg, jobs=args.jobs)
    counts = ", ".join(f"{k} {v['examples']}" for k, v in manifest["shards"].items())
    print(f"examples: {counts}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .model.train import train
    from .pipeline import load_shards

    cfg = _config(args)
    train_ex, version = load_shards(args.data, "train")
    val_ex, _ = load_shards(args.data, "validation")
    resume = load_checkpoint(args.resume) if args.resume else None
    if resume is not None and resume.vocab_version != version:
        raise CheckpointError(f"checkpoint vocabulary {resume.vocab_version} does not match shards {version}")
    augment = cfg.augment if any((cfg.augment.transpose, cfg.augment.delete, cfg.augment.nv_noise)) else None
    best = train(train_ex, val_ex, cfg.model, cfg.train, augment, args.out, resume)
    print(f"best checkpoint: epoch {best.epoch}, step {best.step}")
    return EXIT_OK


def cmd_quantize(args) -> int:
    from .pipeline import quantize

    perf = parse_midi(Path(args.performance).read_bytes())
    beats = parse_annotations(Path(args.annotations).read_text(encoding="utf-8"))
    ckpt = load_checkpoint(args.checkpoint)
    result = quantize(perf, beats, ckpt, measures=args.measures or 2, beam=args.beam,
                      ticks_per_beat=parse_tpb(args.ticks_per_beat), title=Path(args.performance).stem)
    atomic_write_text(args.out, result.musicxml)
    for i, n in enumerate(result.window_repairs):
        print(f"window {i}: {n} repairs")
    for r in result.engraving_repairs:
        print(f"engraving: {r}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .metrics import evaluate_corpus
    from .pipeline import load_shards

    ckpt = load_checkpoint(args.checkpoint)
    examples, version = load_shards(args.data, args.split)
    if version != ckpt.vocab_version:
        raise CheckpointError(f"checkpoint vocabulary {ckpt.vocab_version} does not match shards {version}")
    report = evaluate_corpus(ckpt, examples, beam=args.beam)
    atomic_write_text(args.out, report.to_json())
    print(f"onset F1 {report.onset_f1:.4f}  NV accuracy {report.nv_accuracy}  NV MSE {report.nv_mse}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beatquant", description="Beat-based rhythm quantization of performance MIDI.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, measures=True, seed=True):
        p.add_argument("--config", help="YAML config file")
        if measures:
            p.add_argument("--measures", type=int, help="measures per sequence (default 2)")
        if seed:
            p.add_argument("--seed", type=int)

    p = sub.add_parser("synthesize", help="generate a synthetic aligned corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--pieces", type=int, default=500)
    p.add_argument("--measures", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("prepare", help="build training shards from aligned data")
    p.add_argument("--scores", required=True)
    p.add_argument("--performances", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--signatures", help="comma-separated, e.g. 2/4,3/4,4/4")
    p.add_argument("--ticks-per-beat", help="per-signature override, e.g. 6/8=18")
    p.add_argument("--jobs", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on prepared shards")
    p.add_argument("--data", required=True, help="prepared directory")
    p.add_argument("--out", required=True)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    common(p, measures=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("quantize", help="quantize one performance to MusicXML")
    p.add_argument("performance")
    p.add_argument("annotations")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--ticks-per-beat", help="per-signature override, e.g. 6/8=18")
    p.add_argument("--measures", type=int)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("evaluate", help="score a checkpoint on a prepared split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="prepared directory or shard file")
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--beam", type=int, default=5)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    from .model.train import TrainingDiverged

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except INPUT_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
