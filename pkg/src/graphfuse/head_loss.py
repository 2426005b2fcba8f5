"""Fusion readout, per-frame sequence regressor, and the concordance correlation
coefficient used both as metric and as training loss (``2 - CCC``)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numcore as nc
from .encoders import LstmStack, run_lstm_stack
from .errors import DimensionError, UsageError
from .numcore import ParamStore, Tensor

LOSS_OFFSET = 2.0
CCC_FLOOR = 1e-8


@dataclass
class ReadoutHead:
    fusion_W: Tensor       # (A*K, K)
    fusion_b: Tensor
    regressor: LstmStack   # two LSTM layers then affine to one value

    @classmethod
    def create(cls, store: ParamStore, prefix: str, num_nodes: int, width: int,
               input_width: int, rng: np.random.Generator,
               hidden: Sequence[int] = (64, 32)) -> "ReadoutHead":
        return cls(store.add(f"{prefix}.fusion_W", nc.glorot(rng, num_nodes * width, width)),
                   store.add(f"{prefix}.fusion_b", np.zeros(width)),
                   LstmStack.create(store, f"{prefix}.regressor", input_width, 1, rng, hidden))


def fuse_readout(vertices, W: Tensor, b: Tensor | None = None) -> Tensor:
    """Concatenate the A node rows of each frame and map them to K."""
    v = nc.as_tensor(vertices)
    flat = nc.reshape(v, v.shape[:-2] + (v.shape[-2] * v.shape[-1],))
    return nc.fully_connected(flat, W, b)


def predict_sequence(fused, head: ReadoutHead) -> Tensor:
    """Per-frame scalar predictions; LSTM state is carried across frames.

    (N, width) gives (N,), (B, N, width) gives (B, N).
    """
    x = nc.as_tensor(fused)
    squeeze = x.ndim == 2
    if squeeze:
        x = nc.expand_dims(x, 0)
    if x.shape[1] < 1:
        raise UsageError("predict_sequence needs at least one frame")
    out = run_lstm_stack(x, head.regressor)
    out = nc.reshape(out, out.shape[:-1])
    return out[0] if squeeze else out


@dataclass(frozen=True)
class CCCStats:
    mean_pred: float
    mean_label: float
    var_pred: float
    var_label: float
    covariance: float
    ccc: float
    n_frames: int

    @property
    def loss(self) -> float:
        return LOSS_OFFSET - self.ccc


def _check_pair(pred, label) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    y = np.asarray(label, dtype=np.float64).reshape(-1)
    if p.shape != y.shape:
        raise DimensionError(f"prediction length {p.size} != label length {y.size}")
    if p.size < 2:
        raise UsageError(f"CCC needs at least 2 frames, got {p.size}")
    return p, y


def standardize(x: np.ndarray) -> np.ndarray:
    return (x - x.mean()) / np.sqrt(x.var() + CCC_FLOOR)


def ccc(pred, label, standardize_first: bool = False) -> CCCStats:
    """Population-moment CCC with a denominator floor for constant inputs."""
    p, y = _check_pair(pred, label)
    if standardize_first:
        p, y = standardize(p), standardize(y)
    mp, my = p.mean(), y.mean()
    dp, dy = p - mp, y - my
    vp, vy = np.mean(dp * dp), np.mean(dy * dy)
    cov = np.mean(dp * dy)
    # variances summed first so that swapping the arguments is bit-exact
    value = 2.0 * cov / max((mp - my) ** 2 + (vp + vy), CCC_FLOOR)
    return CCCStats(float(mp), float(my), float(vp), float(vy), float(cov), float(value), p.size)


def ccc_loss_grad(pred, label) -> np.ndarray:
    """Analytic d(2 - CCC)/d(pred)."""
    p, y = _check_pair(pred, label)
    n = p.size
    mp, my = p.mean(), y.mean()
    dp, dy = p - mp, y - my
    cov = np.mean(dp * dy)
    denom = (mp - my) ** 2 + np.mean(dp * dp) + np.mean(dy * dy)
    d_cov = dy / n
    d_denom = 2.0 * dp / n + 2.0 * (mp - my) / n
    if denom < CCC_FLOOR:
        denom, d_denom = CCC_FLOOR, np.zeros_like(p)
    d_ccc = 2.0 * d_cov / denom - 2.0 * cov * d_denom / denom ** 2
    return -d_ccc


def ccc_loss(pred: Tensor, label, standardize_first: bool = False) -> Tensor:
    """Differentiable ``2 - CCC`` over all frames of ``pred`` (any shape)."""
    p = nc.reshape(nc.as_tensor(pred), (-1,))
    y = np.asarray(label, dtype=np.float64).reshape(-1)
    if p.shape[0] != y.size:
        raise DimensionError(f"prediction length {p.shape[0]} != label length {y.size}")
    if y.size < 2:
        raise UsageError("CCC needs at least 2 frames")
    if standardize_first:
        y = standardize(y)
        c = p - nc.mean(p)
        p = c / nc.sqrt(nc.mean(c * c) + CCC_FLOOR)
    mp = nc.mean(p)
    dp = p - mp
    dy = y - y.mean()
    cov = nc.mean(dp * dy)
    denom = (mp - y.mean()) ** 2 + nc.mean(dp * dp) + float(np.mean(dy * dy))
    if denom.item() < CCC_FLOOR:
        denom = CCC_FLOOR
    return LOSS_OFFSET - 2.0 * cov / denom


def mean_utterance_ccc(preds: Sequence, labels: Sequence, standardize_first: bool = False) -> float:
    """CCC per utterance, averaged; the reporting convention for devel scores."""
    if not preds:
        raise UsageError("no utterances to score")
    return float(np.mean([ccc(p, y, standardize_first).ccc for p, y in zip(preds, labels)]))
