"""JSON checkpoints.

Floats are written with ``repr`` (shortest round-tripping decimal), so a
save/load cycle reproduces every weight bit for bit.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .kernel import DeuBank, KernelConfig
from .nn import Activation, BatchNorm, DenseLayer, Network

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _arr(x) -> list:
    return np.asarray(x, dtype=np.float64).tolist()


def to_dict(net: Network, seed: int = 0, epochs: int = 0) -> dict:
    layers = []
    for layer in net.layers:
        entry = {"W": _arr(layer.W), "bias": _arr(layer.bias)}
        bn = layer.batch_norm
        if bn is not None:
            entry["batch_norm"] = {
                "gamma": _arr(bn.gamma), "beta": _arr(bn.beta),
                "running_mean": _arr(bn.running_mean), "running_var": _arr(bn.running_var),
                "momentum": bn.momentum, "eps_bn": bn.eps_bn,
            }
        act = layer.activation
        if act is not None:
            a = {"kind": act.kind}
            if act.kind == "deu":
                d = act.deu
                a["deu"] = {
                    "a": _arr(d.a), "b": _arr(d.b), "c": _arr(d.c),
                    "c1": _arr(d.c1), "c2": _arr(d.c2),
                    "frozen": d.frozen.astype(bool).tolist(),
                    "subspace": [str(d.subspace(i)) for i in range(len(d))],
                }
            elif act.kind == "prelu":
                a["prelu_alpha"] = _arr(act.prelu_alpha)
            elif act.kind == "swish":
                a["swish_beta"] = _arr(act.swish_beta)
            entry["activation"] = a
        layers.append(entry)
    cfg = net.cfg
    return {
        "format_version": FORMAT_VERSION,
        "arch": net.arch,
        "activation": net.kind,
        "kernel": {"epsilon": cfg.epsilon, "exp_arg_clamp": cfg.exp_arg_clamp,
                   "output_clamp": cfg.output_clamp},
        "seed": seed,
        "epochs": epochs,
        "layers": layers,
    }


def from_dict(doc: dict) -> tuple[Network, dict]:
    """Returns the network and the checkpoint metadata (seed, epochs, arch)."""
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise CheckpointError("not a DEU checkpoint (format_version missing)")
    if doc["format_version"] != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc['format_version']!r}, "
                              f"expected {FORMAT_VERSION}")
    try:
        cfg = KernelConfig(**doc["kernel"])
        layers = []
        for entry in doc["layers"]:
            bn = None
            if "batch_norm" in entry:
                b = entry["batch_norm"]
                bn = BatchNorm(np.array(b["gamma"]), np.array(b["beta"]),
                               np.array(b["running_mean"]), np.array(b["running_var"]),
                               b["momentum"], b["eps_bn"])
            act = None
            if "activation" in entry:
                a = entry["activation"]
                if a["kind"] == "deu":
                    d = a["deu"]
                    n = len(d["a"])
                    bank = DeuBank(np.array(d["a"], dtype=np.float64), np.array(d["b"], dtype=np.float64),
                                   np.array(d["c"], dtype=np.float64), np.array(d["c1"], dtype=np.float64),
                                   np.array(d["c2"], dtype=np.float64),
                                   np.array(d["frozen"], dtype=bool).reshape(3, n),
                                   np.zeros(n, np.int8), np.zeros(n, np.int8))
                    bank.resolve(cfg)
                    act = Activation("deu", deu=bank)
                elif a["kind"] == "prelu":
                    act = Activation("prelu", prelu_alpha=np.array(a["prelu_alpha"], dtype=np.float64))
                elif a["kind"] == "swish":
                    act = Activation("swish", swish_beta=np.array(a["swish_beta"], dtype=np.float64))
                else:
                    act = Activation(a["kind"])
            layers.append(DenseLayer(np.array(entry["W"], dtype=np.float64),
                                     np.array(entry["bias"], dtype=np.float64), bn, act))
        net = Network(layers, cfg)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    if net.arch != list(doc["arch"]):
        raise CheckpointError(f"layer shapes {net.arch} disagree with recorded arch {doc['arch']}")
    return net, {"seed": doc.get("seed", 0), "epochs": doc.get("epochs", 0), "arch": doc["arch"]}


def save(net: Network, path, seed: int = 0, epochs: int = 0) -> None:
    """Atomic write: a crash mid-save leaves the previous checkpoint intact."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(to_dict(net, seed, epochs)))
    os.replace(tmp, path)


def load(path) -> tuple[Network, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"cannot parse checkpoint {path}: {exc}") from exc
    return from_dict(doc)
