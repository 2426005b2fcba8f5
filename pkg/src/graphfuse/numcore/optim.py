from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DimensionError


@dataclass
class RmspropState:
    learning_rate: float = 0.005
    decay: float = 0.9
    epsilon: float = 1e-8
    mean_square: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ConfigError(f"RMSprop decay must lie in (0, 1), got {self.decay}")
        if self.epsilon <= 0 or self.learning_rate <= 0:
            raise ConfigError("RMSprop learning_rate and epsilon must be positive")


def rmsprop_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                 state: RmspropState) -> dict[str, np.ndarray]:
    """One update: s <- decay*s + (1-decay)*g^2 ; p <- p - lr*g/(sqrt(s)+eps).

    Returns new parameter arrays; ``state.mean_square`` is updated in place.
    Missing gradients count as zero.
    """
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif g.shape != p.shape:
            raise DimensionError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        s = state.mean_square.get(name)
        if s is None:
            s = np.zeros_like(p)
        elif s.shape != p.shape:
            raise DimensionError(f"{name}: optimizer state shape {s.shape} != {p.shape}")
        s = state.decay * s + (1.0 - state.decay) * g * g
        state.mean_square[name] = s
        out[name] = p - state.learning_rate * g / (np.sqrt(s) + state.epsilon)
    return out


class RMSprop:
    """Binds an :class:`RmspropState` to a :class:`ParamStore` for training loops."""

    def __init__(self, store, learning_rate: float = 0.005, decay: float = 0.9,
                 epsilon: float = 1e-8):
        self.store = store
        self.state = RmspropState(learning_rate, decay, epsilon)

    def step(self) -> None:
        # parameters the tape never reached are left untouched, state included
        reached = {k: t for k, t in self.store.items() if t.grad is not None}
        params = {k: t.data for k, t in reached.items()}
        grads = {k: t.grad for k, t in reached.items()}
        for k, v in rmsprop_step(params, grads, self.state).items():
            self.store[k].data = v
