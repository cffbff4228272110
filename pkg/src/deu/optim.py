"""Adam with separate learning rates for network weights and activation parameters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kernel import KernelConfig
from .nn import Network


@dataclass(frozen=True)
class OptimizerConfig:
    lr_weights: float = 1e-3
    lr_deu_scale: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    clip_deu_grad_norm: Optional[float] = 5.0

    def __post_init__(self):
        if not self.lr_weights > 0:
            raise ValueError("lr_weights must be positive")
        if not self.lr_deu_scale >= 0:
            raise ValueError("lr_deu_scale must be non-negative")
        if self.clip_deu_grad_norm is not None and not self.clip_deu_grad_norm > 0:
            raise ValueError("clip_deu_grad_norm must be positive when set")

    def lr(self, group: str) -> float:
        return self.lr_weights * (self.lr_deu_scale if group == "activation" else 1.0)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              cfg: OptimizerConfig, group: str,
              masks: Optional[dict[str, np.ndarray]] = None) -> None:
    """One bias-corrected Adam update of ``params`` in place.

    Entries where ``masks[name]`` is true keep their value and moments. For
    the ``"activation"`` group the concatenated gradient is rescaled to
    ``cfg.clip_deu_grad_norm`` when its norm exceeds it.
    """
    masks = masks or {}
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
    grads = {k: np.array(g, dtype=np.float64) for k, g in grads.items()}
    for name, mask in masks.items():
        if mask is not None and name in grads:
            grads[name][mask] = 0.0
    if group == "activation" and cfg.clip_deu_grad_norm is not None and grads:
        norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if norm > cfg.clip_deu_grad_norm:
            scale = cfg.clip_deu_grad_norm / norm
            for g in grads.values():
                g *= scale

    state.step += 1
    lr = cfg.lr(group)
    bc1 = 1.0 - cfg.beta1 ** state.step
    bc2 = 1.0 - cfg.beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m_new = cfg.beta1 * m + (1 - cfg.beta1) * g
        v_new = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        update = lr * (m_new / bc1) / (np.sqrt(v_new / bc2) + cfg.eps_adam)
        mask = masks.get(name)
        if mask is not None:
            keep = np.asarray(mask, dtype=bool)
            m_new = np.where(keep, m, m_new)
            v_new = np.where(keep, v, v_new)
            update = np.where(keep, 0.0, update)
        m[...] = m_new
        v[...] = v_new
        p -= update


def resolve_all(net: Network, cfg: Optional[KernelConfig] = None) -> Network:
    """Re-project every DEU neuron onto its subspace (idempotent)."""
    cfg = cfg or net.cfg
    for bank in net.deu_banks():
        bank.resolve(cfg)
    return net


class Adam:
    """Two-group Adam over a :class:`Network`."""

    def __init__(self, cfg: OptimizerConfig = OptimizerConfig()):
        self.cfg = cfg
        self.states = {"weights": AdamState(), "activation": AdamState()}

    def step(self, net: Network, grads: dict[str, np.ndarray]) -> None:
        params = net.parameters()
        for group, state in self.states.items():
            names = [k for k, (_, g, _) in params.items() if g == group]
            if not names:
                continue
            adam_step({k: params[k][0] for k in names}, {k: grads[k] for k in names},
                      state, self.cfg, group, {k: params[k][2] for k in names})
        resolve_all(net)
        net.version += 1
