"""Parameter containers and the standard layers the fusion model is built from."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DimensionError
from .tensor import Tensor, as_tensor, matmul, mean, sqrt

VARIANCE_FLOOR = 1e-8


class ParamStore:
    """Flat, insertion-ordered mapping of dotted names to trainable tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def with_prefix(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self._params.items() if k.startswith(prefix)}

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ConfigError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, v in state.items():
            p = self._params[k]
            v = np.asarray(v, dtype=np.float64)
            if v.shape != p.shape:
                raise DimensionError(f"{k}: expected shape {p.shape}, got {v.shape}")
            p.data = v.copy()


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def fully_connected(x, W: Tensor, b: Tensor | None = None) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] != W.shape[0]:
        raise DimensionError(f"fully_connected: input width {x.shape[-1]} != weight rows {W.shape[0]}")
    out = matmul(x, W)
    return out if b is None else out + b


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate); identity when not training."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return x * (keep / (1.0 - rate))


@dataclass
class BatchNormState:
    """Running statistics for one normalisation layer, indexed by channel."""

    channels: int
    momentum: float = 0.1
    running_mean: np.ndarray = field(default=None)  # type: ignore[assignment]
    running_var: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.running_mean is None:
            self.running_mean = np.zeros(self.channels)
        if self.running_var is None:
            self.running_var = np.ones(self.channels)


def batch_norm(x, channel_axis: int, state: BatchNormState, gamma: Tensor, beta: Tensor,
               training: bool) -> Tensor:
    """Normalise each channel along ``channel_axis`` over every other axis.

    ``gamma``/``beta`` have one entry per channel.  In training the batch
    statistics are used and folded into ``state``; otherwise the running
    statistics are.
    """
    x = as_tensor(x)
    axis = channel_axis % x.ndim
    if x.shape[axis] != state.channels:
        raise DimensionError(f"batch_norm: axis {axis} has {x.shape[axis]} channels, "
                             f"state expects {state.channels}")
    reduce_axes = tuple(i for i in range(x.ndim) if i != axis)
    bshape = [1] * x.ndim
    bshape[axis] = state.channels
    if training:
        mu = mean(x, axis=reduce_axes, keepdims=True)
        centred = x - mu
        var = mean(centred * centred, axis=reduce_axes, keepdims=True)
        xhat = centred / sqrt(var + VARIANCE_FLOOR)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu.data.reshape(-1)
        state.running_var = (1 - m) * state.running_var + m * var.data.reshape(-1)
    else:
        mu = state.running_mean.reshape(bshape)
        var = state.running_var.reshape(bshape)
        xhat = (x - mu) * (1.0 / np.sqrt(var + VARIANCE_FLOOR))
    return xhat * gamma.reshape(bshape) + beta.reshape(bshape)
