"""Command-line entry point: gen, train, eval, ablate, gradcheck, export-embeddings."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import load_checkpoint, model_checksum, save_checkpoint
from .config import SCHEMA_VERSION, STRATEGIES, STREAMS, TARGETS, RunConfig, load_run_config
from .data import SignalSpec, generate_corpus, load_corpus, load_manifest, split
from .errors import ConfigError, GraphFuseError, UsageError
from .model import EnsembleModel
from .train import evaluate, stack_batch, train_with_sweep
from .verify import layer_gradcheck

log = logging.getLogger("graphfuse")

TABLE_HEADER = f"# graphfuse table schema_version={SCHEMA_VERSION}"
GRADCHECK_TOLERANCE = 1e-4


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def _write_table(rows: list[list[str]], out: str | None) -> str:
    text = "\n".join([TABLE_HEADER] + ["\t".join(r) for r in rows]) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    return text


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _manifest_path(cfg: RunConfig, config_path: Path | None) -> Path:
    if not cfg.manifest:
        raise ConfigError("config has no manifest path")
    p = Path(cfg.manifest)
    if not p.is_absolute() and config_path is not None and not p.exists():
        p = config_path.parent / p
    return p


def _load_split(manifest_path: Path, cultures: Sequence[str]):
    manifest = load_manifest(manifest_path)
    train_ids, devel_ids = split(manifest, cultures)
    corpus = load_corpus(manifest_path, train_ids + devel_ids)
    return corpus, corpus.select(train_ids), corpus.select(devel_ids)


def _parse_strategy(token: str, cfg: RunConfig) -> RunConfig:
    """``name`` or ``single_feature:stream``."""
    name, _, stream = token.partition(":")
    if name not in STRATEGIES:
        raise ConfigError(f"unknown strategy {name!r}; choose from {STRATEGIES}")
    if name == "single_feature":
        if stream not in STREAMS:
            raise ConfigError(f"single_feature needs a stream, e.g. single_feature:{STREAMS[0]}")
        return cfg.with_model(strategy=name, single_stream=stream)
    if stream:
        raise ConfigError(f"strategy {name!r} takes no stream suffix")
    return cfg.with_model(strategy=name)


def metrics_record(cfg: RunConfig, result, runs, model, wall: float) -> dict:
    """One MetricsRecord; ``wall_clock_seconds`` is the only run-dependent field."""
    def history(r):
        return [{"epoch": e.epoch, "train_ccc_loss": e.train_loss, "devel_ccc": e.devel}
                for e in r.history]
    return {
        "schema_version": SCHEMA_VERSION,
        "config_digest": cfg.digest(),
        "strategy": cfg.model.strategy,
        "seed": cfg.seed,
        "learning_rate": result.learning_rate,
        "best_epoch": result.best_epoch,
        "best_devel_ccc": result.best_devel,
        "epochs": history(result),
        "members": [{"strategy": m.model.config.single_stream, "best_epoch": m.best_epoch,
                     "best_devel_ccc": m.best_devel, "epochs": history(m)}
                    for m in result.members],
        "sweep": [{"learning_rate": r.learning_rate, "best_devel_ccc": r.best_devel} for r in runs]
        if cfg.lr_sweep else [],
        "model_checksum": model_checksum(model),
        "wall_clock_seconds": wall,
    }


def run_training(cfg: RunConfig, config_path: Path | None = None, on_epoch=None):
    corpus, train, devel = _load_split(_manifest_path(cfg, config_path), cfg.cultures)
    return train_with_sweep(cfg, train, devel, corpus.manifest.streams, on_epoch)


# -- commands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    spec = SignalSpec() if args.spec == "-" else SignalSpec.from_dict(_read_json(args.spec))
    corpus = generate_corpus(spec, args.out_dir)
    gen = corpus.manifest.generator
    print(f"wrote {len(corpus.bundles)} utterances to {Path(args.out_dir) / 'manifest.json'}")
    for t, p in gen["probe"].items():
        print(f"probe {t}: best_single={_fmt(p['best_single'])} pair={_fmt(p['pair'])} "
              f"gap={_fmt(p['gap'])}")
    if not gen["probe_gap_ok"]:
        log.warning("two-stream probe gap below 0.05 for at least one target")
    return 0


def cmd_train(args) -> int:
    path = Path(args.config)
    cfg = load_run_config(path)
    if args.lr_sweep:
        cfg = replace(cfg, lr_sweep=True)
    out = Path(args.out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def on_epoch(rec):
        log.info("epoch %d loss %.4f devel %s", rec.epoch, rec.train_loss,
                 " ".join(f"{k}={v:.4f}" for k, v in rec.devel.items()))
    t0 = time.perf_counter()
    best, runs = run_training(cfg, path, on_epoch)
    wall = time.perf_counter() - t0
    run_cfg = replace(cfg, learning_rate=best.learning_rate)
    save_checkpoint(out / "checkpoint.json", best.model, run_cfg)
    cfg.save(out / "config.json")
    record = metrics_record(cfg, best, runs, best.model, wall)
    with open(out / "metrics.jsonl", "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"best devel CCC {json.dumps(best.best_devel, sort_keys=True)} "
          f"(epoch {best.best_epoch}, lr {best.learning_rate}); checkpoint {out / 'checkpoint.json'}")
    return 0


def cmd_eval(args) -> int:
    model, cfg = load_checkpoint(args.checkpoint)
    cultures = args.cultures.split(",") if args.cultures else cfg.cultures
    _, train, devel = _load_split(Path(args.manifest), cultures)
    bundles = devel if args.split == "devel" else train
    scores = evaluate(model, bundles, cfg.model.standardize_before_ccc)
    rows = [["target", "ccc"]] + [[t, _fmt(scores[t])] for t in model.targets]
    sys.stdout.write(_write_table(rows, args.out))
    return 0


def cmd_ablate(args) -> int:
    path = Path(args.config)
    base = load_run_config(path)
    tokens = [s for s in args.strategies.split(",") if s]
    if not tokens:
        raise UsageError("--strategies is empty")
    cfgs = [_parse_strategy(tok, base) for tok in tokens]
    rows = [["strategy"] + list(base.targets)]
    for tok, cfg in zip(tokens, cfgs):
        log.info("ablation: training %s", tok)
        best, _ = run_training(cfg, path)
        rows.append([tok] + [_fmt(best.best_devel[t]) for t in base.targets])
    sys.stdout.write(_write_table(rows, args.out))
    return 0


def cmd_gradcheck(args) -> int:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    report = layer_gradcheck(cfg.model, seed=cfg.seed if args.seed is None else args.seed)
    rows = [["layer", "max_relative_error", "status"]]
    rows += [[k, f"{v:.3e}", "ok" if v <= GRADCHECK_TOLERANCE else "FAIL"]
             for k, v in report.items()]
    sys.stdout.write(_write_table(rows, args.out))
    worst = max(report.values())
    if worst > GRADCHECK_TOLERANCE:
        raise GraphFuseError(f"gradient check failed: max relative error {worst:.3e}")
    return 0


def cmd_export_embeddings(args) -> int:
    model, cfg = load_checkpoint(args.checkpoint)
    if isinstance(model, EnsembleModel):
        raise UsageError("baseline_ave is an ensemble of predictions and has no fused vectors")
    target = args.target or model.targets[0]
    if target not in model.targets:
        raise UsageError(f"checkpoint has no head for target {target!r}")
    cultures = args.cultures.split(",") if args.cultures else cfg.cultures
    _, train, devel = _load_split(Path(args.manifest), cultures)
    bundles = devel if args.split == "devel" else train
    vecs, labels = [], []
    for b in bundles:
        streams, lab = stack_batch([b])
        vecs.append(model.fused(streams)[target].data[0])
        labels.append(lab[0])
    vecs, labels = np.concatenate(vecs), np.concatenate(labels)
    out = Path(args.out_file)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write(f"# graphfuse embeddings schema_version={SCHEMA_VERSION} target={target} "
                 f"labels={','.join(TARGETS)}\n")
        fh.write(f"{vecs.shape[0]},{vecs.shape[1]}\n")
        for v, y in zip(vecs, labels):
            fh.write(",".join(f"{x:.17g}" for x in np.concatenate([v, y])) + "\n")
    print(f"wrote {vecs.shape[0]} frames x {vecs.shape[1]} dims to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphfuse", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic corpus")
    g.add_argument("spec", help="signal spec JSON, or '-' for defaults")
    g.add_argument("out_dir")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one run from a config file")
    t.add_argument("config")
    t.add_argument("--out-dir", help="overrides the config's out_dir")
    t.add_argument("--lr-sweep", action="store_true",
                   help="retrain at increasing learning rates and keep the best devel score")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="CCC table of a checkpoint on a corpus")
    e.add_argument("checkpoint")
    e.add_argument("manifest")
    e.add_argument("--cultures", help="comma-separated; defaults to the run's cultures")
    e.add_argument("--split", choices=("devel", "train"), default="devel")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train several strategies and tabulate devel CCC")
    a.add_argument("config")
    a.add_argument("--strategies", default="ave,fc,gnn_st,gnn_od_edge,ttf_only,amef_only,ttf_amef",
                   help="comma-separated; single_feature:<stream> selects one stream")
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    c.add_argument("config", nargs="?")
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.set_defaults(func=cmd_gradcheck)

    x = sub.add_parser("export-embeddings", help="per-frame fused vectors with labels")
    x.add_argument("checkpoint")
    x.add_argument("manifest")
    x.add_argument("out_file")
    x.add_argument("--target", choices=TARGETS)
    x.add_argument("--cultures")
    x.add_argument("--split", choices=("devel", "train"), default="devel")
    x.set_defaults(func=cmd_export_embeddings)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return UsageError.exit_code if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GraphFuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
