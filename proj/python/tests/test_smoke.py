import json
import math
import pathlib

import pytest

import mhflid

ROOT = pathlib.Path(__file__).resolve().parents[2]


def tiny(method="mhpflid"):
    c = json.loads((ROOT / "configs" / "default.json").read_text())
    c["method"] = method
    c["data"]["samples"] = 200
    c["partitioner"]["alpha"] = 1.0
    c["clients"] = [{"model": "TinyConvNet-2"}, {"model": "TinyConvNet-3"}]
    c["messenger"] = {"conv": [8, 8, 16], "head": 16}
    c["plan"]["rounds"] = 2
    c["plan"]["epochs_injection"] = 1
    return c


def test_shipped_configs_validate():
    for path in sorted((ROOT / "configs").glob("*.json")):
        ok, lines = mhflid.validate(mhflid.load_config(path))
        assert ok, lines


def test_unknown_key_is_rejected():
    c = tiny()
    c["plan"]["epochs"] = 3
    with pytest.raises(ValueError):
        mhflid.validate(c)


def test_messenger_is_light():
    mes, clients = mhflid.param_counts(mhflid.load_config(ROOT / "configs" / "default.json"))
    assert mes == 33203
    assert all(mes < 0.25 * n for n in clients)


def test_metrics():
    assert mhflid.accuracy([0, 1, 1, 2], [0, 1, 2, 2]) == 0.75
    assert mhflid.macro_f1([0, 1, 1, 0], [0, 1, 0, 0], 2) == pytest.approx((4 / 5 + 2 / 3) / 2)
    assert mhflid.mean_dice([1, 1, 0, 0], [1, 0, 0, 0], 1, 2) == pytest.approx(2 / 3)


def test_run_is_deterministic_and_writes_artifacts(tmp_path):
    a = mhflid.run(tiny(), tmp_path / "a")
    b = mhflid.run(tiny())
    assert a["metrics_csv"] == b["metrics_csv"]
    for name in ("metrics.csv", "summary.json", "cross_eval.csv", "distillation.csv"):
        assert (tmp_path / "a" / name).exists()
    assert len(a["finals"]) == 2
    for k, f in enumerate(a["finals"]):
        assert a["cross_eval"][k][k] == f["acc"]
        assert math.isnan(f["dice"])
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["average"]["acc"] == pytest.approx(sum(f["acc"] for f in a["finals"]) / 2)


def test_aggregating_identical_messengers_is_identity():
    wire = mhflid.run(tiny())["messenger"]
    rnd, count, entries = mhflid.snapshot_entries(wire)
    merged = mhflid.snapshot_entries(mhflid.aggregate([wire, wire, wire], "uniform"))[2]
    assert [e[0] for e in merged] == [e[0] for e in entries]
    for (_, _, x), (_, _, y) in zip(entries, merged):
        assert max(abs(p - q) for p, q in zip(x, y)) < 1e-7
    assert all(name.startswith("messenger.") for name, _, _ in entries)


def test_compare_self(tmp_path):
    mhflid.run(tiny(), tmp_path / "r")
    text = mhflid.compare([tmp_path / "r", tmp_path / "r"])
    assert "Average" in text
    with pytest.raises(Exception):
        mhflid.compare([tmp_path / "missing"])
