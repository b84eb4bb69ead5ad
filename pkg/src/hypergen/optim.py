"""Adam with bias correction, as a pure function over dicts of arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, cfg: AdamConfig) -> tuple[dict, AdamState]:
    """One Adam update. Inputs are left untouched; new arrays are returned."""
    t = state.step + 1
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {name!r}")
        m = state.m.get(name, np.zeros_like(p)) * cfg.beta1 + (1.0 - cfg.beta1) * g
        v = state.v.get(name, np.zeros_like(p)) * cfg.beta2 + (1.0 - cfg.beta2) * (g * g)
        new_params[name] = p - cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(t, new_m, new_v)
