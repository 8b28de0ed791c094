"""Command-line surface: generate | complexity | train | eval | mismatch.

Every run takes a JSON config (plus repeatable --set key=value overrides,
flags win) and writes its outputs under a run directory together with a copy
of the effective config, so results are reproducible from the directory
alone. Log verbosity comes from the SCAMP_LOG environment variable. Failures
print one machine-parsable line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import complexity
from .config import ConfigError, RunConfig
from .corpus import load_corpus, save_corpus, find_queries
from .evaluation import evaluate_corpus
from .synthetic import OracleAnnotations, SyntheticSpec, generate_synthetic
from .training import (build_negative_cache, model_from_checkpoint,
                       run_full_training, save_checkpoint, train_stage1,
                       train_stage2, video_alphas, write_metrics)

logger = logging.getLogger(__name__)


def _configure_logging() -> None:
    level = os.environ.get("SCAMP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = RunConfig.from_json(args.config)
    else:
        cfg = RunConfig(seed=0)
    overrides = getattr(args, "set", None) or []
    if overrides:
        cfg = cfg.with_overrides(overrides)
    cfg.validate()
    return cfg


def _run_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args) -> int:
    spec = SyntheticSpec.from_json(args.spec)
    corpus, oracle = generate_synthetic(spec)
    save_corpus(corpus, args.out)
    oracle_path = args.oracle or str(args.out) + ".oracle.json"
    oracle.to_json(oracle_path)
    print(f"wrote {len(corpus.videos)} videos / {len(corpus.queries)} queries "
          f"to {args.out} (oracle: {oracle_path})")
    return 0


def cmd_complexity(args) -> int:
    corpus = load_corpus(args.corpus)
    lines = ["video_id,alpha,raw_count,n_queries"]
    for video in corpus.videos:
        queries = find_queries(video.video_id, corpus)
        if not queries:
            logger.warning("video %s has no queries; skipped", video.video_id)
            continue
        est = complexity.estimate(video.video_id, corpus, args.k_max)
        lines.append(f"{video.video_id},{est.alpha},{est.raw_count},{len(queries)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    corpus = load_corpus(args.corpus, max_query_len=cfg.max_query_len,
                         vocab_size=cfg.vocab_size)
    out = _run_dir(args.out_dir)
    cfg.to_json(out / "config.json")
    alphas = video_alphas(corpus, cfg.k_max)
    model, rows1 = train_stage1(corpus, cfg, alphas=alphas)
    save_checkpoint(model, out / "stage1.json", cfg.digest())
    cache = build_negative_cache(model, corpus, cfg.k_negatives, cfg)
    cache.to_json(out / "cache.json")
    model, rows2 = train_stage2(model, corpus, cache, cfg, alphas=alphas)
    save_checkpoint(model, out / "final.json", cfg.digest())
    write_metrics(rows1 + rows2, out / "metrics.csv")
    print(f"trained {len(rows1) + len(rows2)} steps; outputs in {out}")
    return 0


def _evaluate(args, heatmap_only: bool) -> int:
    cfg = _load_config(args)
    corpus = load_corpus(args.corpus, max_query_len=cfg.max_query_len,
                         vocab_size=cfg.vocab_size)
    model, _ = model_from_checkpoint(args.checkpoint, seed=cfg.seed)
    oracle = OracleAnnotations.from_json(args.oracle) if args.oracle else None
    scene_source = args.scene_source or cfg.scene_source
    report = evaluate_corpus(model, corpus, cfg, strategy=args.strategy,
                             scene_source=scene_source, oracle=oracle)
    out = _run_dir(args.out_dir)
    report.write_heatmap_csv(out / "heatmap.csv")
    if not heatmap_only:
        cfg.to_json(out / "config.json")
        report.write_csv(out / "per_query.csv")
        report.write_json(out / "report.json")
    summary = " ".join(f"{k}={v:.4f}" for k, v in sorted(report.recalls.items()))
    print(f"strategy={args.strategy} mIoU={report.miou:.4f} {summary}")
    return 0


def cmd_eval(args) -> int:
    return _evaluate(args, heatmap_only=False)


def cmd_mismatch(args) -> int:
    return _evaluate(args, heatmap_only=True)


def _add_common_eval_args(sp) -> None:
    sp.add_argument("--config", help="run config JSON (defaults when omitted)")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override a config key (repeatable; wins over file)")
    sp.add_argument("--strategy", default="adaptive",
                    help="adaptive | fixed:n | window:w,s (default: adaptive)")
    sp.add_argument("--scene-source", dest="scene_source",
                    choices=["estimate", "gt", "oracle"],
                    help="heatmap scene axis source (default: config value)")
    sp.add_argument("--oracle", help="oracle annotations JSON (for scene_source=oracle)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scamp",
        description="Scene-complexity-adaptive moment retrieval pipeline. "
                    "Config keys and defaults: " + ", ".join(
                        f"{k}={getattr(RunConfig(seed=0), k)!r}"
                        for k in RunConfig.__dataclass_fields__))
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("generate", help="generate a synthetic corpus + oracle")
    sp.add_argument("spec", help="generator spec JSON (seed mandatory)")
    sp.add_argument("out", help="output corpus JSONL path")
    sp.add_argument("--oracle", help="oracle output path (default: <out>.oracle.json)")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("complexity", help="scene complexity CSV per video")
    sp.add_argument("corpus", help="corpus JSONL path")
    sp.add_argument("--k-max", dest="k_max", type=int, default=12,
                    help="complexity clamp (default 12)")
    sp.add_argument("--out", help="write CSV here instead of stdout")
    sp.set_defaults(func=cmd_complexity)

    sp = sub.add_parser("train", help="two-stage training run")
    sp.add_argument("corpus", help="corpus JSONL path")
    sp.add_argument("config", help="run config JSON")
    sp.add_argument("out_dir", help="run directory for checkpoints/metrics")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override a config key (repeatable; wins over file)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    sp.add_argument("corpus", help="corpus JSONL path")
    sp.add_argument("checkpoint", help="checkpoint manifest path")
    sp.add_argument("out_dir", help="run directory for report files")
    _add_common_eval_args(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("mismatch", help="scene/proposal mismatch heatmap only")
    sp.add_argument("corpus", help="corpus JSONL path")
    sp.add_argument("checkpoint", help="checkpoint manifest path")
    sp.add_argument("out_dir", help="directory for heatmap.csv")
    _add_common_eval_args(sp)
    sp.set_defaults(func=cmd_mismatch)
    return parser


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line machine-parsable failure contract
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
