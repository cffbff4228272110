"""Dense feedforward networks with per-neuron activations and manual backprop.

Layer ``i`` computes ``z = x @ W.T + bias``, optionally batch-normalizes ``z``,
then applies its activation column-wise. The last layer is linear and feeds
softmax cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kernel import DeuBank, EvalGrid, KernelConfig, eval_batch

ACTIVATIONS = ("deu", "relu", "prelu", "swish")
DEU_FIELDS = ("a", "b", "c", "c1", "c2")


class ShapeError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps_bn: float = 1e-5

    @classmethod
    def create(cls, width: int, momentum: float = 0.1, eps_bn: float = 1e-5) -> "BatchNorm":
        return cls(np.ones(width), np.zeros(width), np.zeros(width), np.ones(width), momentum, eps_bn)


def batchnorm_forward(bn: BatchNorm, z: np.ndarray, train: bool):
    """Returns ``(out, cache)``. In train mode the running statistics are updated in place."""
    if train:
        n = z.shape[0]
        if n < 2:
            raise ValueError("batch normalization needs at least 2 samples in train mode")
        mean = z.mean(axis=0)
        var = z.var(axis=0)
        bn.running_mean[:] = (1 - bn.momentum) * bn.running_mean + bn.momentum * mean
        bn.running_var[:] = (1 - bn.momentum) * bn.running_var + bn.momentum * var * n / (n - 1)
    else:
        mean, var = bn.running_mean, bn.running_var
    inv_std = 1.0 / np.sqrt(var + bn.eps_bn)
    xhat = (z - mean) * inv_std
    return bn.gamma * xhat + bn.beta, (xhat, inv_std)


def batchnorm_backward(bn: BatchNorm, dout: np.ndarray, cache):
    """Gradients ``(dz, dgamma, dbeta)`` for a train-mode forward."""
    xhat, inv_std = cache
    n = dout.shape[0]
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * bn.gamma
    dz = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dz, dgamma, dbeta


# ---------------------------------------------------------------------------
# layers


@dataclass
class Activation:
    kind: str
    deu: Optional[DeuBank] = None
    prelu_alpha: Optional[np.ndarray] = None
    swish_beta: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        present = {"deu": self.deu is not None, "prelu": self.prelu_alpha is not None,
                   "swish": self.swish_beta is not None}
        for k, has in present.items():
            if has != (self.kind == k):
                raise ValueError(f"activation {self.kind!r}: parameters for {k!r} "
                                 f"{'present' if has else 'missing'}")


@dataclass
class DenseLayer:
    W: np.ndarray
    bias: np.ndarray
    batch_norm: Optional[BatchNorm] = None
    activation: Optional[Activation] = None   # None on the linear output layer

    @property
    def fan_in(self) -> int:
        return self.W.shape[1]

    @property
    def width(self) -> int:
        return self.W.shape[0]


@dataclass
class ForwardCache:
    mode: str
    version: int
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)       # z before batch norm
    normed: list = field(default_factory=list)    # activation inputs
    bn: list = field(default_factory=list)
    evals: list = field(default_factory=list)     # EvalGrid for DEU layers


@dataclass
class Network:
    layers: list[DenseLayer]
    cfg: KernelConfig = field(default_factory=KernelConfig)
    version: int = 0

    @property
    def arch(self) -> list[int]:
        return [self.layers[0].fan_in] + [l.width for l in self.layers]

    @property
    def kind(self) -> str:
        return self.layers[0].activation.kind

    def num_parameters(self) -> int:
        return sum(p.size for p, _, _ in self.parameters().values())

    def parameters(self) -> dict[str, tuple[np.ndarray, str, Optional[np.ndarray]]]:
        """``name -> (array, group, frozen_mask)``; arrays are live references."""
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{i}.W"] = (layer.W, "weights", None)
            out[f"{i}.bias"] = (layer.bias, "weights", None)
            if layer.batch_norm is not None:
                out[f"{i}.gamma"] = (layer.batch_norm.gamma, "weights", None)
                out[f"{i}.beta"] = (layer.batch_norm.beta, "weights", None)
            act = layer.activation
            if act is None:
                continue
            if act.kind == "deu":
                for j, name in enumerate(DEU_FIELDS):
                    mask = act.deu.frozen[j] if j < 3 else None
                    out[f"{i}.deu.{name}"] = (getattr(act.deu, name), "activation", mask)
            elif act.kind == "prelu":
                out[f"{i}.prelu_alpha"] = (act.prelu_alpha, "activation", None)
            elif act.kind == "swish":
                out[f"{i}.swish_beta"] = (act.swish_beta, "activation", None)
        return out

    def deu_banks(self) -> list[DeuBank]:
        return [l.activation.deu for l in self.layers
                if l.activation is not None and l.activation.kind == "deu"]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _activate(act: Activation, z: np.ndarray, cfg: KernelConfig):
    if act.kind == "relu":
        return np.maximum(z, 0.0), None
    if act.kind == "prelu":
        return np.where(z > 0, z, act.prelu_alpha * z), None
    if act.kind == "swish":
        return z * _sigmoid(act.swish_beta * z), None
    grid = eval_batch(act.deu, z, cfg)
    return grid.y, grid


def forward(net: Network, x: np.ndarray, mode: str = "infer"):
    """Returns ``(logits, cache)``; ``mode`` is ``"train"`` or ``"infer"``."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.layers[0].fan_in:
        raise ShapeError(f"input shape {x.shape} does not match input width {net.layers[0].fan_in}")
    train = mode == "train"
    cache = ForwardCache(mode, net.version)
    h = x
    for layer in net.layers:
        cache.inputs.append(h)
        z = h @ layer.W.T + layer.bias
        cache.pre.append(z)
        bn_cache = None
        if layer.batch_norm is not None:
            z, bn_cache = batchnorm_forward(layer.batch_norm, z, train)
        cache.bn.append(bn_cache)
        cache.normed.append(z)
        if layer.activation is None:
            h = z
            cache.evals.append(None)
            continue
        h, grid = _activate(layer.activation, z, net.cfg)
        cache.evals.append(grid)
        if not np.all(np.isfinite(h)):
            raise FloatingPointError("non-finite activation output; check the kernel clamps")
    return h, cache


def backward(net: Network, cache: ForwardCache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients for every entry of ``net.parameters()``, keyed by the same names."""
    if cache.mode != "train":
        raise StaleCacheError("backward needs a train-mode forward cache")
    if cache.version != net.version:
        raise StaleCacheError("network changed since this forward pass")
    grads: dict[str, np.ndarray] = {}
    g = np.asarray(dlogits, dtype=np.float64)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        act = layer.activation
        z = cache.normed[i]
        if act is not None:
            if act.kind == "relu":
                g = g * (z > 0)
            elif act.kind == "prelu":
                grads[f"{i}.prelu_alpha"] = (g * np.where(z > 0, 0.0, z)).sum(axis=0)
                g = g * np.where(z > 0, 1.0, act.prelu_alpha)
            elif act.kind == "swish":
                s = _sigmoid(act.swish_beta * z)
                ds = s * (1 - s)
                grads[f"{i}.swish_beta"] = (g * z * z * ds).sum(axis=0)
                g = g * (s + act.swish_beta * z * ds)
            else:
                grid: EvalGrid = cache.evals[i]
                for name in DEU_FIELDS:
                    gp = (g * getattr(grid, f"dy_d{name}")).sum(axis=0)
                    grads[f"{i}.deu.{name}"] = gp
                for j, name in enumerate(DEU_FIELDS[:3]):
                    grads[f"{i}.deu.{name}"][act.deu.frozen[j]] = 0.0
                g = g * grid.dy_dt
        if layer.batch_norm is not None:
            g, grads[f"{i}.gamma"], grads[f"{i}.beta"] = batchnorm_backward(
                layer.batch_norm, g, cache.bn[i])
        grads[f"{i}.W"] = g.T @ cache.inputs[i]
        grads[f"{i}.bias"] = g.sum(axis=0)
        g = g @ layer.W
    return grads


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"{labels.shape[0] if labels.ndim else 0} labels for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return float(loss), grad / n


def predict(net: Network, x: np.ndarray) -> np.ndarray:
    logits, _ = forward(net, x, "infer")
    return np.argmax(logits, axis=1)


def init_network(arch, kind: str, seed: int, cfg: KernelConfig = KernelConfig(),
                 batch_norm: bool = True) -> Network:
    """He-uniform weights, zero biases; DEU a, b, c ~ U(eps, 1) and c1 = c2 = 0."""
    arch = [int(w) for w in arch]
    if len(arch) < 3 or any(w <= 0 for w in arch):
        raise ValueError(f"need input, at least one hidden and an output width, all positive: {arch}")
    if kind not in ACTIVATIONS:
        raise ValueError(f"unknown activation kind {kind!r}")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, width) in enumerate(zip(arch[:-1], arch[1:])):
        limit = np.sqrt(6.0 / fan_in)
        W = rng.uniform(-limit, limit, size=(width, fan_in))
        hidden = i < len(arch) - 2
        act = None
        if hidden:
            if kind == "deu":
                abc = rng.uniform(cfg.epsilon, 1.0, size=(3, width))
                bank = DeuBank(abc[0], abc[1], abc[2], np.zeros(width), np.zeros(width),
                               np.zeros((3, width), bool), np.zeros(width, np.int8),
                               np.zeros(width, np.int8))
                bank.resolve(cfg)
                act = Activation("deu", deu=bank)
            elif kind == "prelu":
                act = Activation("prelu", prelu_alpha=np.full(width, 0.25))
            elif kind == "swish":
                act = Activation("swish", swish_beta=np.ones(width))
            else:
                act = Activation("relu")
        bn = BatchNorm.create(width) if (batch_norm and hidden) else None
        layers.append(DenseLayer(W, np.zeros(width), bn, act))
    return Network(layers, cfg)
