"""End-to-end smoke of the python surface against a tiny fleet."""

import json

import pytest

import fedmobi

TINY = """
[run]
mode = async
seed = 3
eval_every_s = 0
eval_batch = 8
eval_samples = 16

[task]
vocab = 12
num_classes = 3
seq = 6
signal = 0.9
train_samples = 24

[train]
standalone_epochs = 2

[backbone.one]
num_layers = 2
hidden = 16
heads = 2

[client.0]
backbone = one
batch_size = 4

[client.1]
backbone = one
batch_size = 4
"""


def test_version():
    assert fedmobi.__version__ == "0.1.0"


def test_float16_roundtrip():
    assert fedmobi.float16_decode(fedmobi.float16_encode(1.5)) == 1.5
    q = fedmobi.float16_quantize(0.1)
    assert q != 0.1 and abs(q - 0.1) < 1e-4
    assert fedmobi.float16_quantize(q) == q  # quantization is idempotent


def test_partition_layers():
    taps = fedmobi.partition_layers(12, 4)
    assert taps == [3, 6, 9, 12]  # uniform always keeps the deepest layer
    assert fedmobi.partition_layers(12, 3, strategy="shallow") == [1, 2, 3]
    assert fedmobi.partition_layers(12, 3, strategy="deep") == [10, 11, 12]
    rnd = fedmobi.partition_layers(12, 5, strategy="random", seed=7)
    assert sorted(set(rnd)) == rnd and len(rnd) == 5
    assert fedmobi.partition_layers(
        12, 2, strategy="explicit", explicit_layers=[2, 5]) == [2, 5]


def test_side_hidden_rule():
    assert fedmobi.side_hidden_rule([64]) == 64
    assert fedmobi.side_hidden_rule([32, 128]) == 128
    assert fedmobi.side_hidden_rule([32, 64, 128]) == 64  # median of three


def test_make_plan():
    plan = fedmobi.make_plan([
        {"id": "tiny", "num_layers": 4, "hidden": 32},
        {"id": "big", "num_layers": 8, "hidden": 64},
    ])
    assert plan["block_count"] == 4  # min depth across the fleet
    assert plan["side_hidden"] == 64
    assert plan["taps"]["tiny"] == [1, 2, 3, 4]
    assert plan["taps"]["big"] == [2, 4, 6, 8]
    assert plan["hidden"] == {"tiny": 32, "big": 64}
    assert plan["digest"].startswith("0x") and len(plan["digest"]) == 18


def test_forward_flops_scales_with_depth():
    shallow = fedmobi.forward_flops({"id": "a", "num_layers": 2, "hidden": 16}, 8, 4)
    deep = fedmobi.forward_flops({"id": "a", "num_layers": 4, "hidden": 16}, 8, 4)
    assert 0 < shallow < deep


def test_deviation_and_residual_identity():
    logits = [[2.0, -1.0, 0.5], [0.0, 3.0, -2.0]]
    labels = [2, 1]
    dev = fedmobi.compute_deviation(logits, labels)
    for row in dev:
        assert abs(sum(row)) < 1e-12  # softmax and onehot both sum to one
    correction = [[-v for v in row] for row in dev]
    assert fedmobi.corrected_predict(logits, correction) == labels


def test_gradcheck_all_pass():
    results = fedmobi.gradcheck(seed=11)
    assert results and all(r["pass"] for r in results)
    assert max(r["max_rel_err"] for r in results) < 1e-5


def test_run_metrics_and_determinism():
    a = fedmobi.run(TINY)
    b = fedmobi.run(TINY)
    assert a == b  # same seed, byte-identical metrics
    assert a["mode"] == "async"
    assert a["server"]["packets"] == a["cache"]["records"] >= 6
    assert 0.0 <= a["accuracy"]["global"] <= 1.0
    assert a["sidenet_checksum"].startswith("0x")
    c = fedmobi.run(TINY, seed=4)
    assert c["seed"] == 4 and c["sidenet_checksum"] != a["sidenet_checksum"]


def test_run_writes_artifacts(tmp_path):
    out = tmp_path / "run"
    metrics = fedmobi.run(TINY, out_dir=str(out))
    for name in ("metrics.json", "events.jsonl", "curve.csv", "checkpoint.bin"):
        assert (out / name).stat().st_size > 0
    on_disk = json.loads((out / "metrics.json").read_text())
    assert on_disk == metrics
    header = (out / "curve.csv").read_text().splitlines()[0]
    assert header == "t,phase,steps,loss,global_accuracy,accuracy_one"


def test_partition_conserves_samples():
    report = fedmobi.partition(TINY)
    assert report["samples"] == 24
    assert sum(report["shard_sizes"]) == 24
    for hist in report["label_histograms"]:
        assert len(hist["labels"]) == 3


def test_account_reference_preset():
    table = fedmobi.account(rounds=100, lora_rank=64)
    methods = {row["method"]: row for row in table["methods"]}
    ours = methods["streamed-side-tuning"]
    lora = methods["federated-lora-backprop"]
    assert not ours["backprop_on_device"] and ours["trains_while_streaming"]
    assert ours["client_flops"] < 0.048 * lora["client_flops"]
    total = lambda row: row["upload_bytes"] + row["download_bytes"]
    assert total(ours) < 0.068 * min(
        total(row) for name, row in methods.items()
        if name != "streamed-side-tuning")


def test_config_errors_are_value_errors():
    with pytest.raises(ValueError, match="duplicate key"):
        fedmobi.run(TINY + "\n[task]\nvocab = 12\n")
    with pytest.raises(fedmobi.ConfigError):
        fedmobi.run(TINY.replace("signal = 0.9", "signal = 2.0"))
