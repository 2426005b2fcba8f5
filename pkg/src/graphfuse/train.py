"""Training loop, evaluation, and strategy-level orchestration."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .config import STREAMS, TARGETS, RunConfig
from .data import FeatureBundle
from .errors import DataError
from .head_loss import ccc, ccc_loss
from .model import EnsembleModel, FusionModel
from .numcore import RMSprop, Tape

log = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    devel: dict[str, float]


@dataclass
class TrainResult:
    model: FusionModel | EnsembleModel
    history: list[EpochRecord]
    best_epoch: int
    best_devel: dict[str, float]
    learning_rate: float
    members: list["TrainResult"] = field(default_factory=list)

    @property
    def best_score(self) -> float:
        return float(np.mean(list(self.best_devel.values())))


def stack_batch(bundles: Sequence[FeatureBundle]) -> tuple[dict[str, np.ndarray], np.ndarray]:
    frames = {b.n_frames for b in bundles}
    if len(frames) != 1:
        raise DataError(f"a batch needs equal frame counts, got {sorted(frames)}")
    streams = {s: np.stack([b.streams[s] for b in bundles]) for s in STREAMS}
    return streams, np.stack([b.labels for b in bundles])


def group_by_length(bundles: Sequence[FeatureBundle]) -> list[list[FeatureBundle]]:
    groups: dict[int, list[FeatureBundle]] = {}
    for b in bundles:
        groups.setdefault(b.n_frames, []).append(b)
    return [groups[n] for n in sorted(groups)]


def iter_batches(bundles: Sequence[FeatureBundle], batch_size: int,
                 rng: np.random.Generator) -> list[list[FeatureBundle]]:
    batches = []
    for group in group_by_length(bundles):
        order = rng.permutation(len(group))
        batches += [[group[i] for i in order[k:k + batch_size]]
                    for k in range(0, len(group), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def predict_bundles(model, bundles: Sequence[FeatureBundle],
                    max_batch: int = 32) -> dict[str, dict[str, np.ndarray]]:
    """Per-utterance predictions keyed by utterance id then target."""
    out: dict[str, dict[str, np.ndarray]] = {}
    for group in group_by_length(bundles):
        for k in range(0, len(group), max_batch):
            chunk = group[k:k + max_batch]
            streams, _ = stack_batch(chunk)
            preds = model.predict(streams)
            for n, b in enumerate(chunk):
                out[b.utterance_id] = {t: preds[t][n] for t in model.targets}
    return out


def evaluate(model, bundles: Sequence[FeatureBundle], standardize_first: bool = False
             ) -> dict[str, float]:
    """Devel-style score: CCC per utterance, averaged, for each target."""
    preds = predict_bundles(model, bundles)
    return {t: float(np.mean([ccc(preds[b.utterance_id][t], b.label(t), standardize_first).ccc
                              for b in bundles]))
            for t in model.targets}


def pooled_ccc(model, bundles: Sequence[FeatureBundle]) -> dict[str, float]:
    """CCC over all frames of all utterances concatenated."""
    preds = predict_bundles(model, bundles)
    return {t: ccc(np.concatenate([preds[b.utterance_id][t] for b in bundles]),
                   np.concatenate([b.label(t) for b in bundles])).ccc
            for t in model.targets}


def _seeds(seed: int) -> tuple[int, np.random.Generator, np.random.Generator]:
    init, shuffle, drop = np.random.SeedSequence(seed).spawn(3)
    return (int(init.generate_state(1)[0]), np.random.default_rng(shuffle),
            np.random.default_rng(drop))


def build_model(cfg: RunConfig, stream_widths, seed: int | None = None) -> FusionModel:
    init_seed, _, _ = _seeds(cfg.seed if seed is None else seed)
    return FusionModel(cfg.model, stream_widths, cfg.targets, init_seed)


def train_model(model: FusionModel, train: Sequence[FeatureBundle],
                devel: Sequence[FeatureBundle], cfg: RunConfig, seed: int | None = None,
                on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """RMSprop on the batch CCC loss; keeps the epoch with best mean devel CCC."""
    _, shuffle_rng, drop_rng = _seeds(cfg.seed if seed is None else seed)
    opt = RMSprop(model.store, cfg.learning_rate, cfg.rms_decay, cfg.rms_epsilon)
    std = model.config.standardize_before_ccc
    history: list[EpochRecord] = []
    best = (-np.inf, 0, {}, model.state())
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for batch in iter_batches(train, cfg.batch_size, shuffle_rng):
            streams, labels = stack_batch(batch)
            model.store.zero_grad()
            with Tape() as tape:
                preds = model.forward(streams, training=True, rng=drop_rng)
                terms = [ccc_loss(preds[t], labels[..., TARGETS.index(t)], std)
                         for t in model.targets]
                loss = terms[0]
                for term in terms[1:]:
                    loss = loss + term
                loss = loss * (1.0 / len(terms))
            tape.backward(loss)
            opt.step()
            losses.append(loss.item())
        scores = evaluate(model, devel, std)
        rec = EpochRecord(epoch, float(np.mean(losses)), scores)
        history.append(rec)
        if on_epoch:
            on_epoch(rec)
        mean_score = float(np.mean(list(scores.values())))
        if mean_score > best[0]:
            best = (mean_score, epoch, scores, model.state())
    model.load_state(best[3])
    return TrainResult(model, history, best[1], best[2], cfg.learning_rate)


def train_strategy(cfg: RunConfig, train: Sequence[FeatureBundle], devel: Sequence[FeatureBundle],
                   stream_widths, on_epoch=None) -> TrainResult:
    """Train whatever ``cfg.model.strategy`` names, including the averaged ensemble."""
    if cfg.model.strategy != "baseline_ave":
        model = build_model(cfg, stream_widths)
        return train_model(model, train, devel, cfg, on_epoch=on_epoch)
    members = []
    member_seeds = np.random.SeedSequence(cfg.seed).spawn(len(STREAMS))
    for stream, ss in zip(STREAMS, member_seeds):
        sub = replace(cfg, seed=int(ss.generate_state(1)[0]),
                      model=replace(cfg.model, strategy="single_feature", single_stream=stream))
        log.info("baseline_ave: training member %s", stream)
        members.append(train_strategy(sub, train, devel, stream_widths, on_epoch))
    ensemble = EnsembleModel([m.model for m in members])
    scores = evaluate(ensemble, devel, cfg.model.standardize_before_ccc)
    return TrainResult(ensemble, [], 0, scores, cfg.learning_rate, members)


def sweep_learning_rates(cfg: RunConfig) -> list[float]:
    """Start rate, then +step per run up to the stop rate (inclusive)."""
    rates, lr = [], cfg.learning_rate
    while lr <= cfg.lr_sweep_stop + 1e-12:
        rates.append(round(lr, 10))
        lr += cfg.lr_sweep_step
    return rates


def train_with_sweep(cfg: RunConfig, train, devel, stream_widths, on_epoch=None
                     ) -> tuple[TrainResult, list[TrainResult]]:
    """Train once, or once per swept learning rate keeping the best devel score."""
    if not cfg.lr_sweep:
        res = train_strategy(cfg, train, devel, stream_widths, on_epoch)
        return res, [res]
    runs = [train_strategy(replace(cfg, learning_rate=lr), train, devel, stream_widths, on_epoch)
            for lr in sweep_learning_rates(cfg)]
    best = max(runs, key=lambda r: r.best_score)
    return best, runs
