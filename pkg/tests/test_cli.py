import csv
import json
import math

import numpy as np
import pytest

from deu import checkpoint
from deu.cli import main
from deu.kernel import DeuBank, DeuParams
from deu.nn import forward
from deu.train import TrainConfig, load_datasets

SPIRALS = ["--dataset", "spirals", "--n-samples", "200", "--arch", "2-8-2", "--batch-size", "32",
           "--lr-weights", "1e-2"]


def train(tmp_path, *extra, tag="run"):
    ckpt, metrics = tmp_path / f"{tag}.json", tmp_path / f"{tag}.jsonl"
    code = main(["train", *SPIRALS, "--checkpoint-out", str(ckpt), "--metrics-out", str(metrics), *extra])
    assert code == 0
    return ckpt, metrics


def records(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_zero_epochs_writes_initial_record(tmp_path, capsys):
    ckpt, metrics = train(tmp_path, "--epochs", "0")
    recs = records(metrics)
    assert len(recs) == 1 and recs[0]["epoch"] == 0
    assert set(recs[0]) == {"epoch", "train_loss", "train_accuracy", "test_loss", "test_accuracy",
                            "subspaces"}
    assert sum(recs[0]["subspaces"].values()) == 8
    assert checkpoint.load(ckpt)[1]["epochs"] == 0
    assert json.loads(capsys.readouterr().out.splitlines()[0])["epoch"] == 0


def test_same_seed_gives_identical_metrics(tmp_path):
    _, m1 = train(tmp_path, "--epochs", "2", tag="a")
    _, m2 = train(tmp_path, "--epochs", "2", tag="b")
    assert m1.read_bytes() == m2.read_bytes()
    assert (tmp_path / "a.jsonl.timing.jsonl").exists()
    _, m3 = train(tmp_path, "--epochs", "2", "--seed", "1", tag="c")
    assert m1.read_bytes() != m3.read_bytes()


def test_eval_reproduces_final_accuracy(tmp_path, capsys):
    ckpt, metrics = train(tmp_path, "--epochs", "2")
    capsys.readouterr()
    assert main(["eval", str(ckpt), *SPIRALS]) == 0
    out = capsys.readouterr().out
    assert f"accuracy={records(metrics)[-1]['test_accuracy']:.4f}" in out


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    ckpt, _ = train(tmp_path, "--epochs", "1")
    net, _ = checkpoint.load(ckpt)
    checkpoint.save(net, tmp_path / "again.json")
    net2, _ = checkpoint.load(tmp_path / "again.json")
    _, test = load_datasets(TrainConfig(dataset="spirals", n_samples=200))
    assert np.array_equal(forward(net, test.features)[0], forward(net2, test.features)[0])
    assert ckpt.read_text() != ""


@pytest.mark.parametrize("mangle", [lambda s: s[: len(s) // 2], lambda s: s.replace('"format_version": 1', '"format_version": 9')])
def test_corrupted_checkpoint_reports_json_error(tmp_path, capsys, mangle):
    ckpt, _ = train(tmp_path, "--epochs", "0")
    ckpt.write_text(mangle(ckpt.read_text()))
    capsys.readouterr()
    assert main(["eval", str(ckpt), *SPIRALS]) != 0
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "checkpoint" and err["message"]


def test_width_mismatch_is_reported(tmp_path, capsys):
    assert main(["train", "--dataset", "moons", "--arch", "3-4-2", "--epochs", "0"]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "config"


def _checkpoint_with(tmp_path, params):
    ckpt, _ = train(tmp_path, "--epochs", "0", tag="base")
    net, _ = checkpoint.load(ckpt)
    bank = net.layers[0].activation.deu
    cfg = net.cfg
    new = DeuBank.from_params([params] + [bank.params(i) for i in range(1, len(bank))], cfg)
    net.layers[0].activation.deu = new
    out = tmp_path / "edited.json"
    checkpoint.save(net, out)
    return out


def read_curve(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# a=")
    rows = list(csv.DictReader(lines[1:]))
    return lines[0], rows


def test_inspect_relu_neuron(tmp_path):
    ckpt = _checkpoint_with(tmp_path, DeuParams(0.0, 1.0, 0.0))
    out = tmp_path / "curve.csv"
    assert main(["inspect", str(ckpt), "--layer", "0", "--neuron", "0", "--t-min", "-2", "--t-max", "2",
                 "--samples", "41", "--out", str(out)]) == 0
    head, rows = read_curve(out)
    assert "subspace=damping_only" in head
    assert len(rows) == 41
    for r in rows:
        assert float(r["y"]) == max(float(r["t"]), 0.0)


def test_inspect_oscillatory_neuron(tmp_path):
    ckpt = _checkpoint_with(tmp_path, DeuParams(1.0, 0.0, 1.0))
    out = tmp_path / "curve.csv"
    main(["inspect", str(ckpt), "--layer", "0", "--neuron", "0", "--t-min", "0", "--t-max", "3",
          "--samples", "31", "--out", str(out)])
    _, rows = read_curve(out)
    for r in rows:
        t = float(r["t"])
        assert float(r["y"]) == pytest.approx(1 - math.cos(t), abs=1e-12)
        assert r["subspace"] == "no_damping/oscillatory"


def test_inspect_two_samples_and_bad_indices(tmp_path, capsys):
    ckpt = _checkpoint_with(tmp_path, DeuParams(1.0, 3.0, 2.0))
    out = tmp_path / "c.csv"
    assert main(["inspect", str(ckpt), "--layer", "0", "--neuron", "0", "--samples", "2",
                 "--out", str(out)]) == 0
    assert len(read_curve(out)[1]) == 2
    assert main(["inspect", str(ckpt), "--layer", "1", "--neuron", "0", "--out", str(out)]) == 2
    assert main(["inspect", str(ckpt), "--layer", "0", "--neuron", "8", "--out", str(out)]) == 2


def test_compare_table(tmp_path, capsys):
    table = tmp_path / "t.csv"
    assert main(["compare", *SPIRALS, "--epochs", "1", "--kinds", "deu,relu", "--seeds", "0,1,2",
                 "--table-out", str(table)]) == 0
    rows = list(csv.DictReader(table.read_text().splitlines()))
    assert [r["kind"] for r in rows] == ["deu", "relu"]
    assert int(rows[0]["params"]) - int(rows[1]["params"]) == 5 * 8
    for r in rows:
        accs = sorted(float(r[f"seed_{s}"]) for s in range(3))
        assert float(r["median_test_accuracy"]) == accs[1]
    printed = capsys.readouterr().out.splitlines()
    assert printed[0].split()[:3] == ["kind", "params", "median"]


def test_compare_single_row(tmp_path):
    table = tmp_path / "t.csv"
    main(["compare", *SPIRALS, "--epochs", "0", "--kinds", "swish", "--seeds", "3",
          "--table-out", str(table)])
    rows = list(csv.DictReader(table.read_text().splitlines()))
    assert len(rows) == 1 and list(rows[0]) == ["kind", "params", "median_test_accuracy", "seed_3"]


def test_verify_kernel_command(capsys):
    assert main(["verify-kernel", "--draws", "20", "--seed", "1", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["passed"] is True


def test_flag_beats_config_beats_default(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nepochs = 1\nbatch-size = 50\narch=2-8-2\ndataset = moons\nn_samples = 100\n")
    metrics = tmp_path / "m.jsonl"
    assert main(["train", "--config", str(cfg), "--epochs", "2", "--metrics-out", str(metrics)]) == 0
    assert [r["epoch"] for r in records(metrics)] == [0, 1, 2]
    cfg.write_text("bogus = 1\n")
    assert main(["train", "--config", str(cfg)]) == 2
