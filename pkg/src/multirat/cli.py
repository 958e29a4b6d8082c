"""Command-line entry point: synth / train / eval / probe.

Every command reads a JSON config (see ``multirat.config``), writes its
outputs under the configured directory, and is reproducible: re-running
with the same config and seed produces identical logs and reports.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import evaluation, probe as probe_mod, training
from .config import RunConfig, load_config
from .corpus import (
    CorpusBundle,
    Vocabulary,
    generate_synthetic,
    load_annotations,
    load_embeddings,
    load_reviews,
    write_reviews,
)
from .errors import ConfigError, DataError, NumericError


def _prepare_out_dir(out_dir: str, force: bool) -> Path:
    path = Path(out_dir)
    if path.exists() and any(path.iterdir()) and not force:
        raise ConfigError(
            f"output directory {path} exists and is not empty (use --force)"
        )
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _load_file_bundle(cfg: RunConfig) -> CorpusBundle:
    paths = cfg.data.paths
    for name in ("train", "valid"):
        if not getattr(paths, name):
            raise ConfigError(f"data.paths.{name} is required for training")
    vocab = Vocabulary()
    for doc_words in _iter_words(paths.train):
        for word in doc_words:
            vocab.add(word)
    train = load_reviews(paths.train, vocab)
    valid = load_reviews(paths.valid, vocab)
    test = load_reviews(paths.test, vocab) if paths.test else []
    annotated = load_annotations(paths.annotations, vocab) if paths.annotations else []
    return CorpusBundle(train=train, valid=valid, test=test, annotated=annotated,
                        vocab=vocab)


def _iter_words(path):
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed record: {exc}") from exc
            yield record.get("text", "").split()


def _bundle_for(cfg: RunConfig) -> CorpusBundle:
    cfg.data.validate()
    if cfg.data.synthetic is not None:
        return generate_synthetic(cfg.data.synthetic)
    return _load_file_bundle(cfg)


def cmd_synth(cfg: RunConfig, force: bool) -> int:
    if cfg.data.synthetic is None:
        raise ConfigError("synth requires a data.synthetic section")
    out = _prepare_out_dir(cfg.out_dir, force)
    bundle = generate_synthetic(cfg.data.synthetic)
    write_reviews(out / "train.jsonl", bundle.train)
    write_reviews(out / "valid.jsonl", bundle.valid)
    write_reviews(out / "test.jsonl", bundle.test)
    write_reviews(out / "annotated.jsonl", bundle.annotated, with_annotations=True)
    _write_json(out / "manifest.json", {
        "spec": cfg.data.synthetic.to_dict(),
        "seed": cfg.data.synthetic.seed,
        "counts": {
            "train": len(bundle.train), "valid": len(bundle.valid),
            "test": len(bundle.test), "annotated": len(bundle.annotated),
        },
        "config_hash": cfg.hash(),
    })
    print(f"wrote corpus to {out}")
    return 0


def cmd_train(cfg: RunConfig, force: bool) -> int:
    cfg.train.validate()
    out = _prepare_out_dir(cfg.out_dir, force)
    bundle = _bundle_for(cfg)
    if cfg.train.method != training.CONTRA:
        unlabeled = sum(doc.overall_label is None for doc in bundle.train + bundle.valid)
        if unlabeled:
            raise ConfigError(
                f"method {cfg.train.method} needs labels; {unlabeled} documents lack them"
            )
    embeddings = None
    if cfg.data.paths is not None and cfg.data.paths.embeddings:
        embeddings = load_embeddings(cfg.data.paths.embeddings, bundle.vocab,
                                     cfg.model.embed_dim, seed=cfg.model.seed)

    model = training.build_model(len(bundle.vocab), cfg.model, cfg.train, embeddings)
    log = training.MetricsLog(out / "metrics.jsonl")
    splits = training.DataSplits(train=bundle.train, valid=bundle.valid)
    try:
        checkpoint = training.run_method(model, splits, cfg.train, bundle.vocab, log)
    finally:
        log.close()
    training.save_checkpoint(checkpoint, out / "checkpoint.npz")
    _write_json(out / "resolved_config.json",
                {"config": cfg.to_dict(), "config_hash": cfg.hash()})
    print(f"method={cfg.train.method} mode={cfg.train.mode} "
          f"best val loss={checkpoint.val_loss:.6f} (stage {checkpoint.stage}, "
          f"epoch {checkpoint.epoch})")
    print(f"wrote checkpoint and metrics to {out}")
    return 0


def cmd_eval(cfg: RunConfig, checkpoint_path: str, force: bool) -> int:
    if not checkpoint_path:
        raise ConfigError("eval requires --checkpoint")
    out = _prepare_out_dir(cfg.out_dir, force)
    try:
        checkpoint = training.load_checkpoint(checkpoint_path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {checkpoint_path}: {exc}") from exc
    model = training.model_from_checkpoint(checkpoint)
    bundle = _bundle_for(cfg)
    if not bundle.annotated:
        raise DataError("eval requires an annotation set")
    for doc in bundle.annotated:
        if doc.annotations is not None and len(doc.annotations) != model.k_aspects:
            raise DataError(
                f"checkpoint has {model.k_aspects} aspects but annotations have "
                f"{len(doc.annotations)}"
            )
    report = evaluation.evaluate_model(model, checkpoint.method, bundle.test,
                                       bundle.annotated)
    (out / "report.txt").write_text(evaluation.render_report(report) + "\n",
                                    encoding="utf-8")
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(evaluation.render_report(report))
    return 0


def cmd_probe(cfg: RunConfig, force: bool) -> int:
    if cfg.probe is None:
        raise ConfigError("probe requires a probe section")
    out = _prepare_out_dir(cfg.out_dir, force)
    spec = cfg.probe
    seeds = list(cfg.probe_seeds)
    results = []
    for seed in seeds:
        if spec.degenerate:
            results.extend(
                probe_mod.run_probe(spec, method, seed)
                for method in (training.VANILLA, training.THREE_STAGE)
            )
            continue
        trap = probe_mod.build_trap(spec, seed)
        curve = probe_mod.landscape_scan(trap.model, trap.bundle.valid, steps=11)
        curve_text = "\n".join(f"{alpha:.6f} {ce:.10f}" for alpha, ce in curve)
        (out / f"landscape_seed{seed}.txt").write_text(curve_text + "\n",
                                                       encoding="utf-8")
        for method in (training.VANILLA, training.THREE_STAGE):
            results.append(
                probe_mod.run_probe(spec, method, seed, trap=probe_mod.share_trap(trap))
            )
    suite = _summarize(spec, results)
    with open(out / "probe_trials.jsonl", "w", encoding="utf-8") as handle:
        for record in suite.to_records():
            handle.write(json.dumps(record, sort_keys=True) + "\n")
    (out / "probe_summary.txt").write_text(suite.render() + "\n", encoding="utf-8")
    print(suite.render())
    return 0


def _summarize(spec, results):
    import numpy as np

    from .probe import ProbeSummary

    methods = sorted({r.method for r in results})
    escape_rates, mean_ce, sensitivity = {}, {}, {}
    for method in methods:
        mine = [r for r in results if r.method == method and not r.degenerate]
        if mine:
            escape_rates[method] = float(np.mean([r.escaped for r in mine]))
            mean_ce[method] = float(np.mean([r.final_ce for r in mine]))
            sensitivity[method] = {
                str(th): float(np.mean([r.strong_rate > th for r in mine]))
                for th in (0.3, 0.5, 0.7)
            }
    return ProbeSummary(spec=spec, results=results, escape_rates=escape_rates,
                        mean_final_ce=mean_ce, threshold_sensitivity=sensitivity)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multirat",
        description="multi-aspect selective rationalization experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth", "generate a synthetic corpus"),
        ("train", "train a model (vanilla / contra / 3stage)"),
        ("eval", "evaluate a checkpoint"),
        ("probe", "run the interlocking probe"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="JSON run config")
        cmd.add_argument("--force", action="store_true",
                         help="overwrite a non-empty output directory")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override every component seed")
        cmd.add_argument("--out", default=None, help="override the output directory")
        if name == "eval":
            cmd.add_argument("--checkpoint", required=True, help="checkpoint file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).resolve(args.seed, args.out)
        if args.command == "synth":
            return cmd_synth(cfg, args.force)
        if args.command == "train":
            return cmd_train(cfg, args.force)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.force)
        if args.command == "probe":
            return cmd_probe(cfg, args.force)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
