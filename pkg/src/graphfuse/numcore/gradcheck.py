"""Central finite-difference checks for tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor

RTOL = 1e-4
ATOL = 1e-7


def relative_error(analytic: np.ndarray, numeric: np.ndarray,
                   rtol: float = RTOL, atol: float = ATOL) -> np.ndarray:
    """Elementwise |a-n| / max(|a|, |n|, atol/rtol).

    The denominator floor makes ``err <= rtol`` equivalent to passing either
    the relative test or the absolute ``atol`` test for near-zero entries.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol / rtol)
    return np.abs(analytic - numeric) / denom


def finite_difference_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
                            step: float = 1e-5, max_entries: int | None = None,
                            rng: np.random.Generator | None = None) -> dict[str, float]:
    """Compare tape gradients of ``loss_fn`` against central differences.

    ``loss_fn`` must rebuild the graph from the current ``params`` values on
    every call and be deterministic.  With ``max_entries`` only that many
    randomly chosen coordinates per parameter are perturbed.  Returns the max
    relative error per parameter (keyed by name, else positional index).
    """
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    analytic = tape.backward(loss, params)
    rng = rng or np.random.default_rng(0)
    report = {}
    for i, (p, ga) in enumerate(zip(params, analytic)):
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(len(idx))
        for n, j in enumerate(idx):
            orig = flat[j]
            flat[j] = orig + step
            up = loss_fn().item()
            flat[j] = orig - step
            down = loss_fn().item()
            flat[j] = orig
            numeric[n] = (up - down) / (2 * step)
        err = relative_error(ga.reshape(-1)[idx], numeric)
        report[p.name or str(i)] = float(err.max()) if err.size else 0.0
    return report
