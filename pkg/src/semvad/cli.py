"""Command-line entry point: ``semvad {synth,train,eval,stream,serve,ablation}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .errors import ConfigError, SemvadError

log = logging.getLogger("semvad")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _run_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {
        name: getattr(args, name, None)
        for name in ("stride_ms", "window_ms", "k", "t_s_ms", "t_l_ms", "debounce", "mode", "checkpoint", "seed")
    }
    return cfg.replace(**overrides)


def _train_config(args: argparse.Namespace, seed: int):
    from .neural.train import TrainConfig

    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=seed,
                       freeze_encoder=args.freeze_encoder)


def cmd_synth(args: argparse.Namespace) -> int:
    from .corpus import CorpusConfig, build_corpus

    cfg = _run_config(args)
    corpus_cfg = CorpusConfig(cfg.stride_ms, cfg.window_ms, cfg.t_s_ms, cfg.t_l_ms,
                              args.test_fraction, args.jitter_ms)
    try:
        manifest = build_corpus(args.out, args.n_complete, args.n_incomplete, cfg.seed,
                                corpus_cfg, overwrite=args.overwrite)
    except FileExistsError as exc:
        raise ConfigError(str(exc), field="out") from None
    print(manifest)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    from .experiment import load_features, model_config_for, training_set
    from .neural.checkpoint import write_checkpoint
    from .neural.train import train

    cfg = _run_config(args)
    utts = load_features(args.manifest, split=args.split)
    if not utts:
        raise ConfigError(f"no {args.split!r} utterances in {args.manifest}", field="manifest")
    dataset = training_set(utts, cfg.window)
    result = train(dataset, model_config_for(cfg), _train_config(args, cfg.seed), cfg.window)
    write_checkpoint(args.out, result.checkpoint)
    print(json.dumps({"checkpoint": str(args.out), "final_train_loss": result.final_loss,
                      "train_examples": len(dataset)}))
    return EXIT_OK


def _counts_report(path: str) -> int:
    from .evaluation import ConfusionMatrix, MetricsReport, report_json, report_table

    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read counts file {path}: {exc}", field="counts") from None
    counts = data["counts"] if isinstance(data, dict) else data
    try:
        cm = ConfusionMatrix(counts)
    except ValueError as exc:
        raise ConfigError(f"bad counts in {path}: {exc}", field="counts") from None
    report = MetricsReport.from_matrix(cm)
    print(report_table(cm, report))
    print(report_json(cm, report))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    if args.counts:
        return _counts_report(args.counts)
    from .evaluation import evaluate, report_json, report_table
    from .experiment import eval_items, load_features

    cfg = _run_config(args)
    if not cfg.checkpoint or not args.manifest:
        raise ConfigError("eval needs --checkpoint and --manifest (or --counts)", field="checkpoint")
    model = _load(cfg)
    utts = load_features(args.manifest, split=args.split)
    result = evaluate(model, eval_items(utts, cfg.window), cfg.window)
    print(report_table(result.matrix, result.report))
    text = report_json(result.matrix, result.report, stride_ms=cfg.stride_ms, window_ms=cfg.window_ms)
    if args.json:
        Path(args.json).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def _load(cfg: RunConfig):
    from .pipeline import load_model

    if not cfg.checkpoint:
        raise ConfigError("a checkpoint is required", field="checkpoint")
    try:
        return load_model(cfg.checkpoint, cfg)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc), field="checkpoint") from None


def cmd_stream(args: argparse.Namespace) -> int:
    from .features import read_wav
    from .pipeline import stream_offline

    cfg = _run_config(args)
    model = _load(cfg)
    results = stream_offline(model, read_wav(args.wav), cfg)
    for r in results:
        print(json.dumps(r.to_message()))
    eot = next((r for r in results if r.event is not None and r.event.is_end_of_turn), None)
    print(json.dumps({
        "type": "summary",
        "chunks": len(results),
        "end_of_turn": None if eot is None else {"chunk": eot.chunk, "time_ms": eot.end_ms},
    }))
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    from .service import serve

    cfg = _run_config(args)
    model = _load(cfg)
    serve(model, cfg, args.host, args.port)
    return EXIT_OK


def cmd_ablation(args: argparse.Namespace) -> int:
    from .experiment import ablation_table, load_features, run_experiment, summary

    base = _run_config(args)
    train_utts = load_features(args.manifest, split="train")
    test_utts = load_features(args.manifest, split="test")
    results = []
    for stride in args.strides:
        cfg = base.replace(stride_ms=stride)
        results.append(run_experiment(train_utts, test_utts, cfg, _train_config(args, cfg.seed)))
    print(ablation_table(results))
    if args.json:
        Path(args.json).write_text(json.dumps([summary(r) for r in results], indent=2) + "\n")
    return EXIT_OK


def _add_run_flags(p: argparse.ArgumentParser, checkpoint: bool = False) -> None:
    p.add_argument("--config", help="JSON or TOML run config")
    p.add_argument("--stride-ms", type=int)
    p.add_argument("--window-ms", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--t-s-ms", type=int)
    p.add_argument("--t-l-ms", type=int)
    p.add_argument("--debounce", type=int)
    p.add_argument("--mode", choices=["label", "controller"])
    p.add_argument("--seed", type=int)
    if checkpoint:
        p.add_argument("--checkpoint")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=float, default=5.0)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--freeze-encoder", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semvad", description="Streaming semantic endpoint detection")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labelled corpus")
    _add_run_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n-complete", type=int, default=2000)
    p.add_argument("--n-incomplete", type=int, default=2000)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--jitter-ms", type=float, default=0.0)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a checkpoint from a corpus manifest")
    _add_run_flags(p)
    _add_train_flags(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-chunk metrics for a checkpoint, or for raw counts")
    _add_run_flags(p, checkpoint=True)
    p.add_argument("--manifest")
    p.add_argument("--split", default="test")
    p.add_argument("--counts", help="JSON file with a 2x2 [[SS, SC], [CS, CC]] count matrix")
    p.add_argument("--json", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stream", help="per-chunk decisions for one WAV file as JSONL")
    _add_run_flags(p, checkpoint=True)
    p.add_argument("wav")
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("serve", help="run the line-delimited JSON TCP service")
    _add_run_flags(p, checkpoint=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("ablation", help="train and evaluate several chunk strides side by side")
    _add_run_flags(p)
    _add_train_flags(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--strides", type=lambda s: [int(x) for x in s.split(",")], default=[320, 160])
    p.add_argument("--json")
    p.set_defaults(func=cmd_ablation)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        where = f" [{exc.field}]" if exc.field else ""
        print(f"config error{where}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SemvadError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
