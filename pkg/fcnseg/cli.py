from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import pydantic

from .config import RunConfig, build_config
from .dataset import load_dataset
from .errors import ConfigurationError, FcnsegError
from .evalmetric import evaluate_dataset, fcn_method, oracle_method, overlay, proj_method, write_report_csv
from .experiments import EXPERIMENTS, Workbench, run_experiment
from .formats import read_binary_pgm, read_labels, write_pgm, write_segments_json
from .gradcheck import CHECKS, run_checks
from .model import build_fcn, load_checkpoint, save_checkpoint, validate_spec
from .segmenter import proj_segment, render_overlay, segment_line
from .synth import STYLES, generate_dataset, make_corpus, make_toy_atlas, read_atlas
from .trainloop import train

EXIT_OK, EXIT_CHECK_FAILED, EXIT_ERROR = 0, 1, 2


def _csv(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in _csv(text))


def _config(args: argparse.Namespace, flags: dict[str, dict[str, Any]]) -> RunConfig:
    return build_config(args.config, args.set, flags)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    run = _config(
        args,
        {
            "synth": {
                "width": args.width,
                "glyph_count": args.glyphs,
                "styles": _csv(args.styles) if args.styles else None,
                "workers": args.workers,
            },
            "model": {"input_width": args.width},
        },
    )
    atlas = read_atlas(args.atlas) if args.atlas else make_toy_atlas(args.seed, run.synth.glyph_count)
    validate_spec(run.model.spec().model_copy(update={"input_height": atlas.line_height}))
    corpus = make_corpus(atlas, run.synth.corpus_length, args.seed)

    print(f"\n  SYNTH   {args.out} ({args.content}, seed {args.seed})")
    print(f"  ATLAS   {len(atlas)} glyphs, {len(atlas.disconnected_ids())} disconnected, H={atlas.line_height}")
    manifest = generate_dataset(atlas, args.content, corpus, args.count, args.seed, args.out, run.disturb, run.synth)
    print(f"  SUMMARY: {len(manifest.names)} samples written")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    run = _config(
        args,
        {
            "train": {
                "iterations": args.iters,
                "batch_size": args.batch,
                "learning_rate": args.lr,
                "momentum": args.momentum,
                "lr_drops": _ints(args.drops) if args.drops is not None else None,
            },
            "model": {"input_width": args.width},
        },
    )
    if "seed" in run.train.model_fields_set and run.train.seed != args.seed:
        raise ConfigurationError(f"train.seed = {run.train.seed} from --config/--set conflicts with --seed {args.seed}")
    cfg = run.train.model_copy(update={"seed": args.seed})
    dataset = load_dataset(args.data)
    model = build_fcn(run.model.spec(), args.seed)

    print(f"\n  TRAIN   {len(dataset)} samples, {cfg.iterations} iterations, batch {cfg.batch_size}")
    print(f"  LR      {cfg.learning_rate:g}, drops {list(cfg.drops)} by {cfg.lr_factor:g}")
    checkpoint, history = train(model, dataset, cfg)
    save_checkpoint(checkpoint.model, args.out, checkpoint.iteration, checkpoint.alpha, checkpoint.beta)
    log_path = Path(args.log) if args.log else Path(args.out).with_suffix(".csv")
    history.to_csv(log_path)

    print(f"  OUTPUT  {args.out}, {log_path}")
    last = history.records[-1] if history.records else None
    if last:
        print(f"  SUMMARY: loss={last.loss:.5f} acc_pos={last.acc_pos:.4f} acc_neg={last.acc_neg:.4f}")
    print(f"  WEIGHTS alpha={checkpoint.alpha:.4f} beta={checkpoint.beta:.4f}")
    return EXIT_OK


def cmd_segment(args: argparse.Namespace) -> int:
    run = _config(
        args,
        {"post": {"threshold": args.threshold, "min_ink_columns": args.min_ink_columns}},
    )
    image = read_binary_pgm(args.image)
    if args.method == "fcn":
        if not args.checkpoint:
            raise ConfigurationError("--method fcn needs --checkpoint")
        segments = segment_line(load_checkpoint(args.checkpoint), image, run.post)
    else:
        segments = proj_segment(image, args.blank_run_min, run.post)

    write_segments_json(args.out, segments)
    print(f"  SEGMENT {args.image} -> {len(segments)} segments ({args.method})")
    print(f"  OUTPUT  {args.out}")
    if args.overlay:
        if args.labels:
            picture = overlay(image, segments, read_labels(args.labels), run.match)
        else:
            picture = render_overlay(image, segments)
        write_pgm(args.overlay, picture)
        print(f"  OVERLAY {args.overlay}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    run = _config(
        args,
        {
            "match": {"t1": args.t1, "t2": args.t2, "t3": args.t3},
            "post": {"threshold": args.threshold, "min_ink_columns": args.min_ink_columns},
        },
    )
    dataset = load_dataset(args.data)
    if args.method == "fcn":
        if not args.checkpoint:
            raise ConfigurationError("--method fcn needs --checkpoint")
        method = fcn_method(load_checkpoint(args.checkpoint), run.post)
    elif args.method == "proj":
        method = proj_method(args.blank_run_min, run.post)
    else:
        method = oracle_method()

    print(f"\n  EVAL    {len(dataset)} samples, method {args.method}, {run.match.header()}")
    report = evaluate_dataset(method, dataset, run.match, run.post)
    if args.report:
        write_report_csv(report, args.report)
        print(f"  OUTPUT  {args.report}")
    print(f"  SUMMARY: {report.summary()}")
    if args.min_acc is not None and report.mean_accuracy < args.min_acc:
        print(f"  FAILED: mean accuracy below {args.min_acc}")
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.list:
        for name in CHECKS:
            print(name)
        return EXIT_OK
    names = _csv(args.only) if args.only else None
    results = run_checks(names, seed=args.seed, perturb=args.perturb)
    for r in results:
        status = "ok  " if r.passed else "FAIL"
        skipped = f", {r.skipped} skipped" if r.skipped else ""
        print(f"  {status} {r.name:<13} max_err={r.max_error:.2e} tol={r.tolerance:.0e} probes={r.probes}{skipped}")
    failed = [r.name for r in results if not r.passed]
    print(f"  SUMMARY: {len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    run = _config(
        args,
        {
            "synth": {"width": args.width},
            "model": {"input_width": args.width},
            "train": {"iterations": args.iters},
        },
    )
    validate_spec(run.model.spec())
    bench = Workbench(run, args.seed, Path(args.workdir), args.train_count, args.eval_count)
    print(f"\n  EXPERIMENT {args.name} in {args.workdir} (W={args.width}, {run.train.iterations} iterations)")
    for line in run_experiment(args.name, bench, args.style):
        print(f"  RESULT  {line}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'section.key = value' file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")


def _post_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threshold", type=float, help="probability threshold for split columns (default: 0.5)")
    p.add_argument("--min-ink-columns", type=int, help="ink columns a kept segment needs (default: 2)")
    p.add_argument("--blank-run-min", type=int, default=1, help="shortest blank run PROJ splits (default: 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fcnseg", description="FCN character segmentation for text-line images")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--seed", type=int, required=True, help="dataset seed (required)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=3000, help="number of samples (default: 3000)")
    p.add_argument("--width", type=int, help="line width, a multiple of 32 (default: 2048)")
    p.add_argument("--content", choices=("normal", "chaotic"), default="normal", help="text content (default: normal)")
    p.add_argument("--atlas", help="glyph atlas file (default: toy atlas drawn from --seed)")
    p.add_argument("--glyphs", type=int, help="toy atlas size (default: 32)")
    p.add_argument("--styles", help=f"comma-separated subset of {','.join(STYLES)} (default: regular)")
    p.add_argument("--workers", type=int, help="generation threads (default: 1)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the FCN")
    _common(p)
    p.add_argument("--data", action="append", required=True, help="dataset directory, repeatable")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument(
        "--seed",
        type=int,
        required=True,
        help="init and batch sampling seed (required; a train.seed from --config or --set must agree)",
    )
    p.add_argument("--log", help="training log CSV (default: checkpoint path with .csv)")
    p.add_argument("--iters", type=int, help="iterations (default: 50000)")
    p.add_argument("--batch", type=int, help="batch size (default: 8)")
    p.add_argument("--lr", type=float, help="initial learning rate (default: 0.0001)")
    p.add_argument("--momentum", type=float, help="SGD momentum (default: 0.9)")
    p.add_argument("--drops", help="comma-separated lr drop iterations (default: 40%% and 80%% of --iters)")
    p.add_argument("--width", type=int, help="model input width (default: 2048)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="segment one line image")
    _common(p)
    p.add_argument("--image", required=True, help="binary PGM line image")
    p.add_argument("--out", required=True, help="JSON segments output")
    p.add_argument("--method", choices=("fcn", "proj"), default="fcn", help="segmenter (default: fcn)")
    p.add_argument("--checkpoint", help="model checkpoint for --method fcn")
    p.add_argument("--overlay", help="write an inspection PGM here")
    p.add_argument("--labels", help="ground-truth .lab file drawn into the overlay")
    _post_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="score a segmenter on a dataset")
    _common(p)
    p.add_argument("--data", action="append", required=True, help="dataset directory, repeatable")
    p.add_argument("--method", choices=("fcn", "proj", "oracle"), default="fcn", help="segmenter (default: fcn)")
    p.add_argument("--checkpoint", help="model checkpoint for --method fcn")
    p.add_argument("--t1", type=int, help="uncovered-pixel bound (default: 8)")
    p.add_argument("--t2", type=int, help="covered-pixel lower bound (default: 0)")
    p.add_argument("--t3", type=int, help="cross-coverage bound (default: 5)")
    p.add_argument("--report", help="per-sample CSV report")
    p.add_argument("--min-acc", type=float, help="exit 1 when mean accuracy is below this")
    _post_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    _common(p)
    p.add_argument("--list", action="store_true", help="print check names and exit")
    p.add_argument("--only", help="comma-separated check names")
    p.add_argument("--seed", type=int, default=0, help="probe seed (default: 0)")
    p.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("experiment", help="desk-scale synthesize/train/evaluate experiments")
    _common(p)
    p.add_argument("--name", choices=EXPERIMENTS, required=True, help="which experiment")
    p.add_argument("--seed", type=int, required=True, help="experiment seed (required)")
    p.add_argument("--workdir", required=True, help="directory for generated datasets")
    p.add_argument("--width", type=int, default=512, help="line width (default: 512)")
    p.add_argument("--iters", type=int, default=3000, help="iterations per model (default: 3000)")
    p.add_argument("--train-count", type=int, default=1000, help="training samples (default: 1000)")
    p.add_argument("--eval-count", type=int, default=100, help="evaluation samples (default: 100)")
    p.add_argument("--style", choices=STYLES, default="hollow", help="held-out style for --name style")
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except (FcnsegError, pydantic.ValidationError, OSError) as e:
        print(f"  ERROR: {e}", file=sys.stderr)
        return EXIT_ERROR
