from dataclasses import replace

import numpy as np
import pytest

from graphfuse.config import ModelConfig, RunConfig
from graphfuse.data import SignalSpec, generate_corpus, split
from graphfuse.errors import DataError
from graphfuse.model import EnsembleModel
from graphfuse.train import (evaluate, group_by_length, iter_batches, pooled_ccc, stack_batch,
                             sweep_learning_rates, train_strategy, train_with_sweep)

WIDTHS = {"egemaps": 6, "mfcc": 4, "boaw_e": 5, "boaw_m": 5, "deep_spectrum": 7}


@pytest.fixture(scope="module")
def corpus():
    c = generate_corpus(SignalSpec(n_train=6, n_devel=2, n_frames=6, widths=WIDTHS, seed=1))
    tr, dv = split(c.manifest, ["DE", "HU"])
    return c, c.select(tr), c.select(dv)


def _cfg(**model):
    base = dict(width=4, lstm_hidden=(4,), head_hidden=(4,))
    base.update(model)
    return RunConfig(seed=2, epochs=3, batch_size=4, targets=("arousal", "liking"),
                     model=ModelConfig(**base))


def test_batches_cover_every_utterance_once(corpus):
    _, train, _ = corpus
    batches = iter_batches(train, 4, np.random.default_rng(0))
    ids = [b.utterance_id for batch in batches for b in batch]
    assert sorted(ids) == sorted(b.utterance_id for b in train)
    assert [len(b) for b in batches] in ([4, 2], [2, 4])


def test_batches_group_equal_lengths(corpus):
    _, train, _ = corpus
    short = replace(train[0], utterance_id="short", labels=train[0].labels[:3],
                    streams={k: v[:3] for k, v in train[0].streams.items()})
    groups = group_by_length(train + [short])
    assert [len(g) for g in groups] == [1, 6]
    with pytest.raises(DataError):
        stack_batch([train[0], short])


def test_training_is_deterministic_and_keeps_best_epoch(corpus):
    c, train, devel = corpus
    a = train_strategy(_cfg(), train, devel, c.manifest.streams)
    b = train_strategy(_cfg(), train, devel, c.manifest.streams)
    sa, sb = a.model.state(), b.model.state()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)
    assert [h.train_loss for h in a.history] == [h.train_loss for h in b.history]
    best = max(a.history, key=lambda h: np.mean(list(h.devel.values())))
    assert a.best_epoch == best.epoch
    assert evaluate(a.model, devel) == pytest.approx(a.best_devel, abs=1e-12)


def test_training_lowers_the_loss(corpus):
    c, train, devel = corpus
    res = train_strategy(replace(_cfg(dropout=0.0), epochs=8), train, devel, c.manifest.streams)
    assert res.history[-1].train_loss < res.history[0].train_loss


def test_baseline_ave_trains_five_members(corpus):
    c, train, devel = corpus
    res = train_strategy(replace(_cfg(strategy="baseline_ave"), epochs=1), train, devel,
                         c.manifest.streams)
    assert isinstance(res.model, EnsembleModel) and len(res.members) == 5
    assert {m.model.config.single_stream for m in res.members} == set(WIDTHS)
    assert set(res.best_devel) == {"arousal", "liking"}


def test_sweep_rates_follow_increment_protocol():
    assert sweep_learning_rates(RunConfig()) == [0.005, 0.006, 0.007, 0.008, 0.009, 0.01]


def test_sweep_keeps_best_run(corpus):
    c, train, devel = corpus
    cfg = replace(_cfg(), epochs=1, lr_sweep=True, lr_sweep_stop=0.007)
    best, runs = train_with_sweep(cfg, train, devel, c.manifest.streams)
    assert [r.learning_rate for r in runs] == [0.005, 0.006, 0.007]
    assert best.best_score == max(r.best_score for r in runs)


def test_pooled_ccc_is_bounded(corpus):
    c, train, devel = corpus
    res = train_strategy(replace(_cfg(), epochs=1), train, devel, c.manifest.streams)
    assert all(-1 <= v <= 1 for v in pooled_ccc(res.model, devel).values())
