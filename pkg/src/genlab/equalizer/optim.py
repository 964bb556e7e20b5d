"""Adam with per-layer freezing."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import EqualizerModel


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    # steps taken per parameter; frozen parameters do not advance
    t: dict[str, int] = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: EqualizerModel) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in model.params.items()},
                   {k: np.zeros_like(p) for k, p in model.params.items()},
                   dict.fromkeys(model.params, 0))


def adam_step(state: AdamState, model: EqualizerModel, grads: dict[str, np.ndarray],
              learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[EqualizerModel, AdamState]:
    """One bias-corrected Adam update, in place. Parameters of frozen layers
    and their moments are left untouched."""
    for name, p in model.params.items():
        if not model.is_trainable(name):
            continue
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {p.shape}")
        state.t[name] += 1
        t = state.t[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return model, state
