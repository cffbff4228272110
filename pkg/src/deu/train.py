"""Training runs: configuration, dataset assembly, the epoch loop and metrics."""

from __future__ import annotations

import json
import logging
import time
from collections import Counter
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import checkpoint
from .data import BatchIterator, Dataset, load_csv, load_idx, make_synthetic
from .kernel import ALL_SUBSPACES, KernelConfig
from .nn import Network, backward, forward, init_network, softmax_cross_entropy
from .optim import Adam, OptimizerConfig

log = logging.getLogger(__name__)

SYNTHETIC = ("moons", "circles", "spirals")


class TrainingDiverged(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    dataset: str = "idx"
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    train_csv: Optional[str] = None
    test_csv: Optional[str] = None
    label_column: str = "label"
    n_samples: int = 1000
    noise: float = 0.05
    data_seed: int = 0
    arch: str = "784-128-10"
    activation: str = "deu"
    epochs: int = 10
    batch_size: int = 128
    lr_weights: float = 1e-3
    lr_deu_scale: float = 0.1
    epsilon: float = 1e-3
    exp_arg_clamp: float = 30.0
    output_clamp: float = 1e4
    clip_deu_grad_norm: float = 5.0       # <= 0 disables clipping
    batch_norm: bool = True
    seed: int = 0
    checkpoint_out: Optional[str] = None
    metrics_out: Optional[str] = None

    def widths(self) -> list[int]:
        try:
            widths = [int(w) for w in self.arch.split("-")]
        except ValueError:
            raise ConfigError(f"cannot parse arch {self.arch!r}") from None
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ConfigError(f"arch needs at least 2 positive widths: {self.arch!r}")
        return widths

    def kernel_config(self) -> KernelConfig:
        return KernelConfig(self.epsilon, self.exp_arg_clamp, self.output_clamp)

    def optimizer_config(self) -> OptimizerConfig:
        clip = self.clip_deu_grad_norm if self.clip_deu_grad_norm and self.clip_deu_grad_norm > 0 else None
        return OptimizerConfig(self.lr_weights, self.lr_deu_scale, clip_deu_grad_norm=clip)

    @classmethod
    def field_types(cls) -> dict[str, type]:
        hints = {"Optional[str]": str, "str": str, "int": int, "float": float, "bool": bool}
        return {f.name: hints[f.type] for f in fields(cls)}


def load_datasets(cfg: TrainConfig) -> tuple[Dataset, Dataset]:
    if cfg.dataset == "idx":
        paths = (cfg.train_images, cfg.train_labels, cfg.test_images, cfg.test_labels)
        if not all(paths):
            raise ConfigError("idx datasets need train/test image and label paths")
        return load_idx(cfg.train_images, cfg.train_labels), load_idx(cfg.test_images, cfg.test_labels)
    if cfg.dataset == "csv":
        if not (cfg.train_csv and cfg.test_csv):
            raise ConfigError("csv datasets need --train-csv and --test-csv")
        train = load_csv(cfg.train_csv, cfg.label_column)
        test = load_csv(cfg.test_csv, cfg.label_column, train.normalization, train.class_names)
        test.num_classes = train.num_classes
        return train, test
    if cfg.dataset in SYNTHETIC:
        return (make_synthetic(cfg.dataset, cfg.n_samples, cfg.noise, cfg.data_seed),
                make_synthetic(cfg.dataset, cfg.n_samples, cfg.noise, cfg.data_seed + 1))
    raise ConfigError(f"unknown dataset kind {cfg.dataset!r}")


def check_widths(net_or_widths, data: Dataset) -> None:
    widths = net_or_widths.arch if isinstance(net_or_widths, Network) else net_or_widths
    if widths[0] != data.num_features:
        raise ConfigError(f"input width {widths[0]} but dataset has {data.num_features} features")
    if widths[-1] != data.num_classes:
        raise ConfigError(f"output width {widths[-1]} but dataset has {data.num_classes} classes")


def evaluate(net: Network, data: Dataset, batch_size: int = 1000) -> tuple[float, float]:
    """Infer-mode ``(accuracy, mean loss)``."""
    correct = 0
    total_loss = 0.0
    for start in range(0, len(data), batch_size):
        x = data.features[start:start + batch_size]
        y = data.labels[start:start + batch_size]
        logits, _ = forward(net, x, "infer")
        loss, _ = softmax_cross_entropy(logits, y)
        total_loss += loss * len(y)
        correct += int((np.argmax(logits, axis=1) == y).sum())
    return correct / len(data), total_loss / len(data)


def subspace_counts(net: Network) -> dict[str, int]:
    counts: Counter = Counter()
    for bank in net.deu_banks():
        for i in range(len(bank)):
            counts[str(bank.subspace(i))] += 1
    return {str(sid): counts[str(sid)] for sid in ALL_SUBSPACES if counts[str(sid)]}


StepHook = Callable[[Network, int], None]


@dataclass
class RunResult:
    net: Network
    metrics: list[dict]


def run(cfg: TrainConfig, train: Optional[Dataset] = None, test: Optional[Dataset] = None,
        on_step: Optional[StepHook] = None, emit: Optional[Callable[[dict], None]] = None) -> RunResult:
    """Train per ``cfg``; writes metrics/checkpoint files when paths are configured.

    ``on_step(net, step)`` is called after every optimizer step. Metrics
    records carry no timing so that identical seeds give identical files;
    wall time goes to ``<metrics_out>.timing.jsonl``.
    """
    if train is None or test is None:
        train, test = load_datasets(cfg)
    widths = cfg.widths()
    check_widths(widths, train)
    check_widths(widths, test)
    kcfg = cfg.kernel_config()
    net = init_network(widths, cfg.activation, cfg.seed, kcfg, cfg.batch_norm)
    opt = Adam(cfg.optimizer_config())
    batches = BatchIterator(train, cfg.batch_size, cfg.seed, drop_singleton=cfg.batch_norm)

    metrics_path = Path(cfg.metrics_out) if cfg.metrics_out else None
    timing_path = metrics_path.with_name(metrics_path.name + ".timing.jsonl") if metrics_path else None
    for p in (metrics_path, timing_path):
        if p is not None:
            p.write_text("")
    records = []
    t_start = time.perf_counter()

    def record(epoch: int, train_loss: float, train_acc: float) -> None:
        test_acc, test_loss = evaluate(net, test)
        rec = {"epoch": epoch, "train_loss": train_loss, "train_accuracy": train_acc,
               "test_loss": test_loss, "test_accuracy": test_acc,
               "subspaces": subspace_counts(net)}
        records.append(rec)
        wall = time.perf_counter() - t_start
        if metrics_path is not None:
            with metrics_path.open("a") as fh:
                fh.write(json.dumps(rec) + "\n")
            with timing_path.open("a") as fh:
                fh.write(json.dumps({"epoch": epoch, "wall_time": wall}) + "\n")
        if emit is not None:
            emit(rec)
        log.info("epoch %d train_loss=%.4f train_acc=%.4f test_acc=%.4f (%.1fs)",
                 epoch, train_loss, train_acc, test_acc, wall)

    acc0, loss0 = evaluate(net, train)
    record(0, loss0, acc0)
    if cfg.checkpoint_out:
        checkpoint.save(net, cfg.checkpoint_out, cfg.seed, 0)

    step = 0
    for epoch in range(1, cfg.epochs + 1):
        loss_sum = 0.0
        correct = 0
        seen = 0
        for x, y in batches:
            logits, cache = forward(net, x, "train")
            loss, dlogits = softmax_cross_entropy(logits, y)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}")
            grads = backward(net, cache, dlogits)
            opt.step(net, grads)
            step += 1
            if on_step is not None:
                on_step(net, step)
            loss_sum += loss * len(y)
            correct += int((np.argmax(logits, axis=1) == y).sum())
            seen += len(y)
        record(epoch, loss_sum / seen, correct / seen)
        if cfg.checkpoint_out:
            checkpoint.save(net, cfg.checkpoint_out, cfg.seed, epoch)
    return RunResult(net, records)


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
