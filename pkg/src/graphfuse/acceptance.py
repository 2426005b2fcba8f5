"""Acceptance checks, one function per criterion, each returning a CriterionResult."""
from __future__ import annotations

import json
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .amef import AttentionBlock, EdgeGcn, attention_weights, edge_messages, unify
from .cli import main as cli_main
from .config import STREAMS, ModelConfig, RunConfig
from .data import SignalSpec, generate_corpus, split
from .graph_ttf import knn_topology, similarity
from .head_loss import ccc
from .model import NUM_NODES, FusionModel
from .numcore import ParamStore
from .train import evaluate, train_strategy

ABLATION_SEEDS = (0, 1, 2, 3, 4)
ABLATION_EPOCHS = 50
ABLATION_STRATEGIES = tuple(f"single_feature:{s}" for s in STREAMS) + (
    "ave", "ttf_only", "amef_only", "ttf_amef")


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    data: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number} {status} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(number: int, name: str, limit: float | None, fn: Callable[[], tuple[bool, str, dict]]
           ) -> CriterionResult:
    t0 = time.perf_counter()
    ok, detail, data = fn()
    sec = time.perf_counter() - t0
    if limit is not None and sec >= limit:
        ok, detail = False, f"{detail}; runtime {sec:.1f}s over the {limit:.0f}s limit"
    return CriterionResult(number, name, ok, detail, sec, data)


def textbook_ccc(x, y) -> float:
    """Independent oracle: explicit loops over population moments."""
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    vx = sum((a - mx) ** 2 for a in x) / n
    vy = sum((b - my) ** 2 for b in y) / n
    cxy = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    return 2 * cxy / (vx + vy + (mx - my) ** 2)


def _random_streams(rng, widths, batch, frames):
    return {s: rng.standard_normal((batch, frames, widths[s])) for s in STREAMS}


# -- criteria -----------------------------------------------------------------

def check_ccc_closed_forms(seed: int = 0) -> CriterionResult:
    def run():
        rng = np.random.default_rng(seed)
        worst_closed = 0.0
        for _ in range(20):
            a = rng.standard_normal(int(rng.integers(5, 200))) * rng.uniform(0.1, 10)
            a -= a.mean()
            c = rng.uniform(-3, 3)
            worst_closed = max(worst_closed, abs(ccc(a, a).ccc - 1), abs(ccc(a, np.full_like(a, c)).ccc),
                               abs(ccc(-a, a).ccc + 1))
        worst_oracle = 0.0
        for _ in range(1000):
            n = int(rng.integers(2, 100))
            x = rng.standard_normal(n) * rng.uniform(0.1, 3) + rng.uniform(-2, 2)
            y = rng.standard_normal(n) * rng.uniform(0.1, 3) + rng.uniform(-2, 2)
            worst_oracle = max(worst_oracle, abs(ccc(x, y).ccc - textbook_ccc(list(x), list(y))))
        ok = worst_closed <= 1e-9 and worst_oracle <= 1e-12
        return ok, f"closed-form error {worst_closed:.2e}, oracle error {worst_oracle:.2e}", {
            "closed": worst_closed, "oracle": worst_oracle}
    return _timed(1, "ccc closed forms", 10.0, run)


def check_gradients(config: RunConfig | None = None) -> CriterionResult:
    def run():
        with tempfile.TemporaryDirectory() as tmp:
            argv = ["gradcheck", "--out", str(Path(tmp) / "grad.tsv")]
            if config is not None:
                config.save(Path(tmp) / "cfg.json")
                argv.insert(1, str(Path(tmp) / "cfg.json"))
            code = cli_main(argv)
            rows = (Path(tmp) / "grad.tsv").read_text().splitlines()[2:]
        report = {r.split("\t")[0]: float(r.split("\t")[1]) for r in rows}
        worst = max(report.values())
        return code == 0 and worst <= 1e-4, f"max relative error {worst:.2e} over {len(report)} layers", report
    return _timed(2, "gradient soundness", 120.0, run)


def check_invariants(seed: int = 0, instances: int = 1000) -> CriterionResult:
    def run():
        rng = np.random.default_rng(seed)
        soft_err = adj_err = 0.0
        for n in range(instances):
            K, d, k_nn = int(rng.integers(1, 6)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
            blk = AttentionBlock.create(ParamStore(), "a", K, d, rng)
            q = rng.standard_normal((3, int(rng.integers(1, 6)), K)) * rng.uniform(0.1, 5)
            keys = rng.standard_normal((3, int(rng.integers(1, 6)), K)) * rng.uniform(0.1, 5)
            soft_err = max(soft_err, float(np.max(np.abs(attention_weights(q, keys, blk).data.sum(-1) - 1))))
            adj = knn_topology(rng.standard_normal((4, NUM_NODES, K)) * rng.uniform(0.1, 5), k_nn).data
            rows = adj.sum(-1)
            adj_err = max(adj_err, float(np.max(np.abs(rows[rows > 0] - 1))))
        # nothing flows across an all-zero adjacency
        K, De = 4, 3
        gcn = EdgeGcn.create(ParamStore(), "g", K, De, NUM_NODES, rng)
        zero = np.zeros((6, NUM_NODES, NUM_NODES))
        edges = rng.standard_normal((6, NUM_NODES, NUM_NODES, De))
        null = (np.all(unify(edges, zero).data == 0)
                and np.all(edge_messages(rng.standard_normal((6, NUM_NODES, K)), edges, zero, gcn).data == 0))
        ok = soft_err <= 1e-9 and adj_err <= 1e-9 and null
        return ok, (f"softmax row error {soft_err:.2e}, adjacency row error {adj_err:.2e}, "
                    f"zero-adjacency nullity {'exact' if null else 'violated'}"), {}
    return _timed(3, "attention and adjacency invariants", None, run)


def _has_ties(sim: np.ndarray, tol: float = 1e-9) -> bool:
    A = sim.shape[-1]
    for row in sim.reshape(-1, A, A):
        for i in range(A):
            vals = np.sort(np.delete(row[i], i))
            if np.any(np.diff(vals) <= tol):
                return True
    return False


def check_equivariance(seed: int = 0, trials: int = 100) -> CriterionResult:
    """The backbone reads nodes in a fixed order, so the context is held fixed across relabelings."""
    def run():
        rng = np.random.default_rng(seed)
        widths = {s: 6 for s in STREAMS}
        cfg = ModelConfig(width=6, lstm_hidden=(6,), head_hidden=(6,))
        worst, done, skipped = 0.0, 0, 0
        while done < trials:
            model = FusionModel(cfg, widths, ("arousal",), int(rng.integers(1 << 31)))
            v = rng.standard_normal((3, NUM_NODES, cfg.width))
            context = rng.standard_normal((3, cfg.width))
            base = model.graph_pass(v, context)
            if _has_ties(similarity(v).data) or _has_ties(similarity(base["refined"]).data):
                skipped += 1
                continue
            perm = rng.permutation(NUM_NODES)
            moved = model.graph_pass(v[:, perm], context)
            err = max(float(np.max(np.abs(moved["nodes"].data - base["nodes"].data[:, perm]))),
                      float(np.max(np.abs(moved["edges_out"].data
                                          - base["edges_out"].data[:, perm][:, :, perm]))))
            worst = max(worst, err)
            done += 1
        return worst <= 1e-9, f"max deviation {worst:.2e} over {trials} trials ({skipped} tied draws redrawn)", {}
    return _timed(4, "relabeling equivariance", None, run)


def check_overfit(seed: int = 0, epochs: int = 200) -> CriterionResult:
    def run():
        spec = SignalSpec(n_train=8, n_devel=2, n_frames=20, seed=seed)
        corpus = generate_corpus(spec)
        train_ids, _ = split(corpus.manifest, spec.cultures)
        train = corpus.select(train_ids)
        cfg = RunConfig(seed=seed, targets=("arousal",), epochs=epochs)
        hit: list[int] = []

        def on_epoch(rec):
            if rec.devel["arousal"] >= 0.95 and not hit:
                hit.append(rec.epoch)
        res = train_strategy(cfg, train, train, corpus.manifest.streams, on_epoch)
        best = evaluate(res.model, train)["arousal"]
        ok = bool(hit)
        first = f"first reached at epoch {hit[0]}" if hit else "never reached 0.95"
        return ok, f"{len(train)} utterances, best train CCC {best:.4f}, {first}", {"best": best}
    return _timed(5, "overfit sanity", 300.0, run)


def ablation_runs(seeds=ABLATION_SEEDS, strategies=ABLATION_STRATEGIES, epochs: int = ABLATION_EPOCHS,
                  log: Callable[[str], None] | None = None) -> dict:
    """Devel arousal CCC and training seconds for every (seed, strategy) on the default corpus."""
    scores: dict[int, dict[str, float]] = {}
    seconds: dict[int, dict[str, float]] = {}
    for seed in seeds:
        spec = SignalSpec(seed=seed)
        corpus = generate_corpus(spec)
        tr, dv = split(corpus.manifest, spec.cultures)
        train, devel = corpus.select(tr), corpus.select(dv)
        scores[seed], seconds[seed] = {}, {}
        for tok in strategies:
            name, _, stream = tok.partition(":")
            model = ModelConfig(strategy=name, single_stream=stream or None)
            cfg = RunConfig(seed=seed, targets=("arousal",), epochs=epochs, model=model)
            t0 = time.perf_counter()
            res = train_strategy(cfg, train, devel, corpus.manifest.streams)
            seconds[seed][tok] = time.perf_counter() - t0
            scores[seed][tok] = res.best_devel["arousal"]
            if log:
                log(f"seed {seed} {tok}: devel arousal {scores[seed][tok]:.4f} "
                    f"({seconds[seed][tok]:.0f}s)")
    return {"scores": scores, "seconds": seconds}


def check_fusion_advantage(runs: dict) -> CriterionResult:
    def run():
        gaps, secs = [], 0.0
        for seed, row in runs["scores"].items():
            singles = {k: v for k, v in row.items() if k.startswith("single_feature")}
            gaps.append(row["ttf_amef"] - max(singles.values()))
            secs += sum(t for k, t in runs["seconds"][seed].items()
                        if k.startswith("single_feature") or k == "ttf_amef")
        med = float(np.median(gaps))
        ok = med >= 0.05 and secs < 1800
        return ok, (f"median gap over best single {med:.4f} (per seed "
                    f"{', '.join(f'{g:.3f}' for g in gaps)}); training {secs:.0f}s"), {"gaps": gaps}
    return _timed(6, "fusion advantage", None, run)


def check_ablation_ordering(runs: dict) -> CriterionResult:
    def run():
        wins_graph = wins_ave = 0
        for row in runs["scores"].values():
            wins_graph += row["ttf_amef"] >= max(row["ttf_only"], row["amef_only"])
            wins_ave += row["ttf_amef"] > row["ave"]
        n = len(runs["scores"])
        ok = wins_graph >= 3 and wins_ave == n
        return ok, (f"ttf_amef >= max(ttf_only, amef_only) in {wins_graph}/{n} seeds, "
                    f"> ave in {wins_ave}/{n}"), {"graph": wins_graph, "ave": wins_ave}
    return _timed(7, "ablation ordering", None, run)


def check_determinism(seed: int = 0) -> CriterionResult:
    def run():
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            spec = {"n_train": 8, "n_devel": 4, "n_frames": 10, "seed": seed,
                    "widths": {"egemaps": 8, "mfcc": 5, "boaw_e": 6, "boaw_m": 6, "deep_spectrum": 12}}
            (root / "spec.json").write_text(json.dumps(spec))
            cli_main(["gen", str(root / "spec.json"), str(root / "corpus")])
            RunConfig(seed=seed, manifest="corpus/manifest.json", epochs=3, batch_size=4,
                      model=ModelConfig(width=8, lstm_hidden=(8,), head_hidden=(8,))).save(root / "cfg.json")
            codes = [cli_main(["train", str(root / "cfg.json"), "--out-dir", str(root / r)])
                     for r in ("a", "b")]

            def metrics(run_dir):
                recs = [json.loads(x) for x in (root / run_dir / "metrics.jsonl").read_text().splitlines()]
                for r in recs:
                    r.pop("wall_clock_seconds")
                return recs
            same_ckpt = (root / "a" / "checkpoint.json").read_bytes() == \
                (root / "b" / "checkpoint.json").read_bytes()
            same_metrics = metrics("a") == metrics("b")
        ok = codes == [0, 0] and same_ckpt and same_metrics
        return ok, f"checkpoints identical: {same_ckpt}, metrics identical: {same_metrics}", {}
    return _timed(8, "determinism", None, run)


def check_od_edge_equivalence(seed: int = 0, frames: int = 50) -> CriterionResult:
    def run():
        rng = np.random.default_rng(seed)
        widths = {"egemaps": 88, "mfcc": 13, "boaw_e": 100, "boaw_m": 100, "deep_spectrum": 256}
        od = FusionModel(ModelConfig(strategy="gnn_od_edge"), widths, ("arousal",), seed)
        full = FusionModel(ModelConfig(edge_width=1, attention_bypass=True), widths, ("arousal",), seed)
        streams = _random_streams(rng, widths, 1, frames)
        worst = 0.0
        for training in (False, True):
            a, b = od.fused(streams, training=training), full.fused(streams, training=training)
            worst = max(worst, float(np.max(np.abs(a["arousal"].data - b["arousal"].data))))
        worst = max(worst, float(np.max(np.abs(od.predict(streams)["arousal"]
                                               - full.predict(streams)["arousal"]))))
        return worst <= 1e-12, f"max deviation {worst:.2e} on {frames} frames", {}
    return _timed(9, "od_edge equivalence", None, run)


def run_all(include_slow: bool = True, log: Callable[[str], None] = print) -> list[CriterionResult]:
    results = []
    for fn in (check_ccc_closed_forms, check_gradients, check_invariants, check_equivariance,
               check_overfit):
        results.append(fn())
        log(results[-1].line())
    if include_slow:
        runs = ablation_runs(log=log)
        for fn in (check_fusion_advantage, check_ablation_ordering):
            results.append(fn(runs))
            log(results[-1].line())
    for fn in (check_determinism, check_od_edge_equivalence):
        results.append(fn())
        log(results[-1].line())
    return results
