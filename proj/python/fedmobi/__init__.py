"""Federated side-tuning for frozen transformer fleets.

Forward-only devices stream tapped activations plus an output deviation; an
asynchronous server trains one shared side network on the stream. This
package wraps the compiled core: numeric primitives come through directly,
composite results (runs, partitions, accounting) are parsed from the same
canonical JSON the command-line tool writes.
"""

from __future__ import annotations

import json
import os
import tempfile

from ._core import (
    ConfigError,
    ShapeError,
    __version__,
    account_json,
    compute_deviation,
    corrected_predict,
    float16_decode,
    float16_encode,
    float16_quantize,
    forward_flops,
    gradcheck,
    importance_select,
    make_plan,
    partition_json,
    partition_layers,
    run_json,
    side_hidden_rule,
)

__all__ = [
    "ConfigError",
    "ShapeError",
    "__version__",
    "account",
    "compute_deviation",
    "corrected_predict",
    "float16_decode",
    "float16_encode",
    "float16_quantize",
    "forward_flops",
    "gradcheck",
    "importance_select",
    "make_plan",
    "partition",
    "partition_file",
    "partition_layers",
    "run",
    "run_file",
    "side_hidden_rule",
]


def run(config_text: str, *, out_dir: str | None = None, seed: int | None = None) -> dict:
    """Run the full simulated protocol described by config text.

    With ``out_dir`` the artifact set (metrics.json, events.jsonl, curve.csv,
    checkpoint.bin) is written there; without it the artifacts go to a
    temporary directory that is discarded. Returns the parsed metrics.
    """
    if out_dir is not None:
        return json.loads(run_json(config_text, out_dir, seed))
    with tempfile.TemporaryDirectory(prefix="fedmobi-") as tmp:
        return json.loads(run_json(config_text, tmp, seed))


def run_file(path: str | os.PathLike, *, out_dir: str | None = None,
             seed: int | None = None) -> dict:
    """`run` on a config file."""
    with open(path, "r", encoding="utf-8") as f:
        return run(f.read(), out_dir=out_dir, seed=seed)


def partition(config_text: str, *, seed: int | None = None) -> dict:
    """Shard sizes and per-class histograms the run would train on."""
    return json.loads(partition_json(config_text, seed))


def partition_file(path: str | os.PathLike, *, seed: int | None = None) -> dict:
    """`partition` on a config file."""
    with open(path, "r", encoding="utf-8") as f:
        return partition(f.read(), seed=seed)


def account(**scenario) -> dict:
    """Per-client cost rows for every training method under one scenario.

    Keyword fields override the reference preset (clients, samples_per_client,
    seq, act_tokens, hidden, num_layers, block_count, num_classes, batch,
    rounds, lora_rank, perturbations).
    """
    return json.loads(account_json(**scenario))
