"""Frozen reference runs: regenerate or check ``data/golden.json``.

Each record pins a model (by file digest), the quantized input, every oracle
stage, the secure run's revealed logits and stage digest, and its
communication figures.  ``python3 -m quantmpc.golden --check`` recomputes all
records and reports any drift; ``--write`` refreezes them.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .model.config import gen_toy_model
from .model.modelfile import dumps
from .model.oracle import oracle_forward
from .model.runner import run_secure_local, synthetic_embeddings
from .transport.party import transcript_digest

GOLDEN_CONFIGS = {
    "tiny": {"model": {"hidden": 8, "layers": 1, "heads": 1, "seed": 7}, "seq": 4, "input_seed": 7,
             "session_seed": 7, "full_stages": True},
    "toy": {"model": {"hidden": 64, "layers": 2, "heads": 4, "seed": 1}, "seq": 8, "input_seed": 1,
            "session_seed": 1, "full_stages": False},
}


def _digest(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        a = np.ascontiguousarray(np.asarray(arrays[name], dtype=np.int64))
        h.update(name.encode() + str(a.shape).encode() + a.tobytes())
    return h.hexdigest()


def golden_record(name: str) -> dict:
    config = GOLDEN_CONFIGS[name]
    model = gen_toy_model(**config["model"])
    x = synthetic_embeddings(model, config["seq"], config["input_seed"])
    oracle = oracle_forward(model, x)
    run = run_secure_local(model, x, config["session_seed"])
    record = {
        "config": {k: v for k, v in config.items() if k != "full_stages"},
        "model_sha256": hashlib.sha256(dumps(model)).hexdigest(),
        "input": x.data.tolist(),
        "oracle_digest": _digest(oracle),
        "oracle_logits": oracle["logits"].tolist(),
        "secure_logits": np.asarray(run.logits).tolist(),
        "secure_trace_digest": _digest(run.trace),
        "stats": run.stats.summary(),
        "transcript_digest": transcript_digest(run.stats),
    }
    if config["full_stages"]:
        record["oracle_stages"] = {k: np.asarray(v).tolist() for k, v in oracle.items()}
    return record


def load_golden() -> dict:
    return json.loads(resources.files("quantmpc").joinpath("data/golden.json").read_text())


def drift(name: str, frozen: dict | None = None) -> list[str]:
    """Fields of a fresh run that differ from the frozen record (empty when bit-exact)."""
    frozen = frozen if frozen is not None else load_golden()[name]
    fresh = golden_record(name)
    return sorted(k for k in set(fresh) | set(frozen) if fresh.get(k) != frozen.get(k))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="quantmpc.golden")
    mode = parser.add_mutually_exclusive_group(required=True)
    mode.add_argument("--write", action="store_true", help="refreeze data/golden.json")
    mode.add_argument("--check", action="store_true", help="compare fresh runs with the frozen file")
    args = parser.parse_args(argv)
    if args.write:
        path = Path(__file__).parent / "data" / "golden.json"
        path.parent.mkdir(exist_ok=True)
        path.write_text(json.dumps({n: golden_record(n) for n in GOLDEN_CONFIGS}, indent=1, sort_keys=True) + "\n")
        print(f"wrote {path}")
        return 0
    bad = 0
    for name in GOLDEN_CONFIGS:
        fields = drift(name)
        print(f"{name}: {'PASS' if not fields else 'FAIL ' + ','.join(fields)}")
        bad += bool(fields)
    return 5 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
