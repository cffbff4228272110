"""``deu`` command line: train, eval, inspect, compare, verify-kernel.

Option precedence is command-line flag > ``--config`` file > built-in
default. The config file is flat ``key = value`` lines (``#`` comments);
keys may be written in snake_case or kebab-case.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import statistics
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import checkpoint
from .checkpoint import CheckpointError
from .data import DataFormatError
from .kernel import evaluate_arrays
from .nn import ACTIVATIONS, forward
from .train import ConfigError, TrainConfig, TrainingDiverged, check_widths, evaluate, load_datasets, run
from .verify import verify_kernel

log = logging.getLogger("deu")


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def read_config_file(path) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError("config", f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _add_train_flags(p: argparse.ArgumentParser, with_activation: bool = True) -> None:
    types = TrainConfig.field_types()
    for f in fields(TrainConfig):
        if f.name == "activation" and not with_activation:
            continue
        flag = "--" + f.name.replace("_", "-")
        kind = types[f.name]
        conv = _bool if kind is bool else kind
        extra = {"choices": ACTIVATIONS} if f.name == "activation" else {}
        p.add_argument(flag, dest=f.name, type=conv, default=None,
                       help=f"(default: {f.default})", **extra)
    p.add_argument("--config", default=None, help="flat key = value config file")


def build_config(args: argparse.Namespace) -> TrainConfig:
    cfg = TrainConfig()
    types = TrainConfig.field_types()
    if getattr(args, "config", None):
        for key, raw in read_config_file(args.config).items():
            if key not in types:
                raise CliError("config", f"unknown config key {key!r}")
            conv = _bool if types[key] is bool else types[key]
            try:
                cfg = replace(cfg, **{key: conv(raw)})
            except ValueError as exc:
                raise CliError("config", f"{key}: {exc}") from None
    for f in fields(TrainConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            cfg = replace(cfg, **{f.name: value})
    return cfg


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = build_config(args)
    result = run(cfg, emit=lambda rec: print(json.dumps(rec), flush=True))
    final = result.metrics[-1]
    log.info("final test accuracy %.4f", final["test_accuracy"])
    return 0


def cmd_eval(args) -> int:
    net, meta = checkpoint.load(args.checkpoint)
    cfg = build_config(args)
    _, test = load_datasets(cfg)
    check_widths(net, test)
    acc, loss = evaluate(net, test)
    print(f"accuracy={acc:.4f} loss={loss:.6f} samples={len(test)}")
    return 0


def _curve(net, layer: int, neuron: int, t: np.ndarray):
    act = net.layers[layer].activation
    col = np.zeros((len(t), net.layers[layer].width))
    col[:, neuron] = t
    if act.kind == "deu":
        bank = act.deu
        g = evaluate_arrays(bank.a[neuron], bank.b[neuron], bank.c[neuron], bank.c1[neuron],
                            bank.c2[neuron], bank.structural[neuron], bank.regime[neuron], t, net.cfg,
                            frozen=bank.frozen[:, neuron])
        return g.y, g.dy_dt, str(bank.subspace(neuron))
    if act.kind == "relu":
        return np.maximum(t, 0.0), (t > 0).astype(float), "relu"
    if act.kind == "prelu":
        al = act.prelu_alpha[neuron]
        return np.where(t > 0, t, al * t), np.where(t > 0, 1.0, al), "prelu"
    be = act.swish_beta[neuron]
    s = 0.5 * (1 + np.tanh(0.5 * be * t))
    return t * s, s + be * t * s * (1 - s), "swish"


def cmd_inspect(args) -> int:
    net, _ = checkpoint.load(args.checkpoint)
    hidden = [i for i, l in enumerate(net.layers) if l.activation is not None]
    if args.layer not in hidden:
        raise CliError("index", f"layer {args.layer} has no activation (hidden layers: {hidden})")
    width = net.layers[args.layer].width
    if not 0 <= args.neuron < width:
        raise CliError("index", f"neuron {args.neuron} out of range [0, {width})")
    if args.samples < 2:
        raise CliError("usage", "samples must be at least 2")
    t = np.linspace(args.t_min, args.t_max, args.samples)
    y, dy, subspace = _curve(net, args.layer, args.neuron, t)
    act = net.layers[args.layer].activation
    with open(args.out, "w", newline="") as fh:
        if act.kind == "deu":
            p = act.deu.params(args.neuron)
            fh.write(f"# a={p.a!r},b={p.b!r},c={p.c!r},c1={p.c1!r},c2={p.c2!r},subspace={subspace}\n")
        else:
            fh.write(f"# kind={act.kind}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "y", "dy_dt", "subspace"])
        for row in zip(t.tolist(), y.tolist(), dy.tolist()):
            w.writerow([repr(row[0]), repr(row[1]), repr(row[2]), subspace])
    print(f"wrote {args.samples} samples to {args.out}")
    return 0


def compare_table(rows: list[dict], seeds: list[int]) -> str:
    head = ["kind", "params", "median"] + [f"seed{s}" for s in seeds]
    body = [[r["kind"], str(r["params"]), f"{r['median']:.4f}"] + [f"{a:.4f}" for a in r["accuracies"]]
            for r in rows]
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    fmt = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))  # noqa: E731
    return "\n".join([fmt(head)] + [fmt(b) for b in body])


def cmd_compare(args) -> int:
    base = build_config(args)
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not kinds or not seeds:
        raise CliError("usage", "need at least one kind and one seed")
    for k in kinds:
        if k not in ACTIVATIONS:
            raise CliError("usage", f"unknown activation kind {k!r}")
    train, test = load_datasets(base)
    rows = []
    for kind in kinds:
        accs = []
        params = None
        for seed in seeds:
            cfg = replace(base, activation=kind, seed=seed, checkpoint_out=None, metrics_out=None)
            result = run(cfg, train, test)
            accs.append(result.metrics[-1]["test_accuracy"])
            params = result.net.num_parameters()
        rows.append({"kind": kind, "params": params, "median": statistics.median(accs),
                     "accuracies": accs})
    print(compare_table(rows, seeds))
    if args.table_out:
        with open(args.table_out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "params", "median_test_accuracy"] + [f"seed_{s}" for s in seeds])
            for r in rows:
                w.writerow([r["kind"], r["params"], repr(r["median"])] + [repr(a) for a in r["accuracies"]])
    return 0


def cmd_verify_kernel(args) -> int:
    report = verify_kernel(args.draws, args.seed)
    if args.json:
        print(json.dumps(report.as_dict(), indent=2))
    else:
        print("\n".join(report.lines()))
    return 0 if report.passed else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deu", description="Differential equation unit networks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network and write metrics + checkpoint")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset's test split")
    p.add_argument("checkpoint")
    _add_train_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="sample one neuron's activation curve to CSV")
    p.add_argument("checkpoint")
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--neuron", type=int, required=True)
    p.add_argument("--t-min", type=float, default=-3.0)
    p.add_argument("--t-max", type=float, default=3.0)
    p.add_argument("--samples", type=int, default=201)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("compare", help="train every (activation kind, seed) pair and tabulate")
    _add_train_flags(p, with_activation=False)
    p.add_argument("--kinds", default="deu,relu,prelu,swish")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--table-out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify-kernel", help="certify closed forms against RK4 and finite differences")
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_verify_kernel)
    return parser


_ERRORS = (
    (CheckpointError, "checkpoint"),
    (DataFormatError, "data"),
    (ConfigError, "config"),
    (TrainingDiverged, "diverged"),
    (FileNotFoundError, "file"),
    (ValueError, "invalid"),
    (FloatingPointError, "numeric"),
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        code, msg = exc.code, str(exc)
    except Exception as exc:  # noqa: BLE001
        for cls, name in _ERRORS:
            if isinstance(exc, cls):
                code, msg = name, str(exc)
                break
        else:
            raise
    print(json.dumps({"error": code, "message": msg}), file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
