from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, cfg):
    """One bias-corrected Adam update. Returns new ``(params, state)``; inputs are not mutated."""
    if params.keys() != grads.keys():
        raise ValueError("gradient keys do not match parameter keys")
    t = state.step + 1
    new_params, m_new, v_new = {}, {}, {}
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {k} has shape {g.shape}, expected {p.shape}")
        m = state.m.get(k, 0.0)
        v = state.v.get(k, 0.0)
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        step = cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        new_params[k] = (p - step).astype(p.dtype, copy=False)
        m_new[k], v_new[k] = m, v
    return new_params, AdamState(t, m_new, v_new)
