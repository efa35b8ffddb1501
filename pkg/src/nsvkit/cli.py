"""Command-line entry point.

Subcommands: gen-corpus, prepare, train, synthesize, evaluate,
analyze-speakers. Global flags --config/--seed/--workdir apply to every
subcommand. Failures print a machine-readable line
``error<TAB>kind<TAB>message`` to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import pipeline, ppcodec
from .errors import NsvError, ValidationError


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value pipeline config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--workdir", help="override the config workdir")

    parser = argparse.ArgumentParser(
        prog="nsvkit",
        description="Non-speech vocalization synthesis pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-corpus", parents=[common],
                   help="render the synthetic stand-in corpus")
    sub.add_parser("prepare", parents=[common],
                   help="prune, extract features, discretize, encode")
    sub.add_parser("train", parents=[common], help="train the acoustic model")

    synth = sub.add_parser("synthesize", parents=[common],
                           help="synthesize one utterance to WAV")
    synth.add_argument("--checkpoint", help="model checkpoint path")
    synth.add_argument("--utterance", help="pseudo-phonemes of this prepared utterance")
    synth.add_argument("--text", help="pseudo-phoneme text (with --durations)")
    synth.add_argument("--durations", help="comma-separated durations for --text")
    synth.add_argument("--speaker", required=True, help="target speaker id")
    synth.add_argument("--noise-seed", type=int, default=0)
    synth.add_argument("--gt-durations", action="store_true",
                       help="use ground-truth durations instead of predictions")
    synth.add_argument("--out", required=True, help="output WAV path")

    ev = sub.add_parser("evaluate", parents=[common],
                        help="repeated-FID report for speaker-swapped syntheses")
    ev.add_argument("--checkpoint")
    ev.add_argument("--n", type=int, help="utterances per evaluation draw")
    ev.add_argument("--repeats", type=int, help="independent evaluation repeats")
    ev.add_argument("--out", help="report TSV path")

    an = sub.add_parser("analyze-speakers", parents=[common],
                        help="2-D projection of the learned speaker table")
    an.add_argument("--checkpoint")
    an.add_argument("--out", help="projection TSV path")
    return parser


def _load_config(args) -> pipeline.PipelineConfig:
    config = pipeline.parse_config(args.config) if args.config \
        else pipeline.PipelineConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.workdir is not None:
        config.workdir = args.workdir
    return config


def _resolve_checkpoint(args, config):
    path = args.checkpoint or pipeline.checkpoint_path(config)
    if not Path(path).exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return pipeline.load_checkpoint(path)


def _resolve_pp(args, config) -> ppcodec.PseudoPhonemeSequence:
    if args.utterance and args.text:
        raise ValidationError("give either --utterance or --text, not both")
    if args.utterance:
        for pp in ppcodec.read_pp_tsv(pipeline.dataset_dir(config) / "pp.tsv"):
            if pp.utterance_id == args.utterance:
                return pp
        raise ValidationError(f"utterance {args.utterance!r} not in prepared dataset")
    if args.text:
        if not args.durations:
            raise ValidationError("--text requires --durations")
        units = ppcodec.from_text(args.text)
        durations = np.array([int(v) for v in args.durations.split(",")])
        return ppcodec.PseudoPhonemeSequence(
            units=units, durations=durations, frame_rate_hz=pipeline.MEL_RATE_HZ,
            utterance_id="cli")
    raise ValidationError("synthesize needs --utterance or --text")


def _run(args) -> int:
    config = _load_config(args)
    if args.command == "gen-corpus":
        manifest = pipeline.gen_corpus(config)
        print(f"wrote {len(manifest.entries)} clips to {config.corpus_dir}")
    elif args.command == "prepare":
        report = pipeline.prepare(config)
        for key, value in report.items():
            print(f"{key}\t{value}")
    elif args.command == "train":
        ckpt = pipeline.train_pipeline(config)
        print(f"checkpoint written to {pipeline.checkpoint_path(config)} "
              f"({len(ckpt.params)} tensors)")
    elif args.command == "synthesize":
        ckpt = _resolve_checkpoint(args, config)
        record = pipeline.synthesize_utterance(
            ckpt, _resolve_pp(args, config), args.speaker, config,
            noise_seed=args.noise_seed, use_gt_durations=args.gt_durations)
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        from .audioio import write_wav
        write_wav(out, record.clip)
        pipeline.write_sidecar(out.with_suffix(".sidecar.tsv"), record)
        print(f"wrote {out} ({record.clip.duration_s:.2f} s)")
    elif args.command == "evaluate":
        ckpt = _resolve_checkpoint(args, config)
        rows = pipeline.evaluate_pipeline(config, ckpt, n_per_eval=args.n,
                                          repeats=args.repeats)
        out = Path(args.out) if args.out \
            else Path(config.workdir) / "eval" / "fid_report.tsv"
        out.parent.mkdir(parents=True, exist_ok=True)
        pipeline.write_fid_report(out, rows)
        for row in rows:
            print(f"{row['set']}\t{row['emotion']}\t"
                  f"{row['fid_mean']:.4f} ± {row['fid_std']:.4f}")
    elif args.command == "analyze-speakers":
        ckpt = _resolve_checkpoint(args, config)
        out = Path(args.out) if args.out \
            else Path(config.workdir) / "analysis" / "speaker_projection.tsv"
        projection = pipeline.analyze_speakers(ckpt, out)
        if projection.degenerate:
            print("warning: speaker table is rank-deficient; all points at origin",
                  file=sys.stderr)
        print(f"wrote {len(projection.points)} speaker points to {out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _run(args)
    except (NsvError, FileNotFoundError, OSError) as exc:
        print(f"error\t{type(exc).__name__}\t{exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
