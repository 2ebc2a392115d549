"""Adam with per-epoch exponential learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, ShapeError


@dataclass
class AdamState:
    lr0: float = 3e-4
    gamma: float = 0.995
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    epoch: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")

    @property
    def lr(self):
        return self.lr0 * self.gamma ** self.epoch

    def end_epoch(self):
        self.epoch += 1


def adam_step(params, grads, state):
    """Apply one bias-corrected Adam update in place of ``param.data``.

    ``grads`` aligns with ``params``; a ``None`` entry counts as a zero
    gradient. Moment buffers are created lazily on the first call.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    elif len(state.m) != len(params):
        raise ShapeError("optimizer state was built for a different parameter list")

    state.step += 1
    b1, b2, t = state.beta1, state.beta2, state.step
    lr = state.lr
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape or state.m[i].shape != p.data.shape:
            raise ShapeError(f"gradient {g.shape} does not match parameter {p.data.shape}")
        m = b1 * state.m[i] + (1 - b1) * g
        v = b2 * state.v[i] + (1 - b2) * g * g
        state.m[i], state.v[i] = m, v
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state
