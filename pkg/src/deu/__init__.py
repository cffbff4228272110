"""Differential equation units (DEUs) and a small dense-network training engine."""

from .kernel import (DeuBank, DeuParams, EvalResult, KernelConfig, Regime, Structural, SubspaceId,
                     eval, eval_batch, homogeneous_basis, resolve_subspace)
from .nn import Network, backward, forward, init_network, predict, softmax_cross_entropy
from .optim import Adam, OptimizerConfig, adam_step, resolve_all

__all__ = [
    "DeuBank", "DeuParams", "EvalResult", "KernelConfig", "Regime", "Structural", "SubspaceId",
    "eval", "eval_batch", "homogeneous_basis", "resolve_subspace",
    "Network", "backward", "forward", "init_network", "predict", "softmax_cross_entropy",
    "Adam", "OptimizerConfig", "adam_step", "resolve_all",
]
