"""Secure inference on a toy model, step by step, entirely in one process.

Run:  python3 demos/secure_inference_walkthrough.py
"""

import numpy as np

from quantmpc.model import gen_toy_model
from quantmpc.model.census import census
from quantmpc.model.secure import PublicShape
from quantmpc.model.runner import agreement, oracle_logits, run_secure_local, synthetic_embeddings

model = gen_toy_model(hidden=64, layers=2, heads=4, seed=1)
print(f"model: hidden={model.config.hidden} layers={model.config.n_layers} heads={model.config.heads} "
      f"ffn={model.config.ffn} classes={model.config.classes}")

# P1 quantizes its real-valued embeddings to signed 4-bit integers.
inputs = synthetic_embeddings(model, seq=8, seed=1)
print("first token (4-bit):", inputs.data[0][:16], "...")

# P0 deals correlated tables offline, then all three parties evaluate online.
run = run_secure_local(model, inputs, seed=1)
print("secure logits (revealed to P1):", np.asarray(run.logits))
print("plaintext oracle logits:        ", oracle_logits(model, inputs))

# Each stage is checked against the oracle fed with the secure run's own inputs to that stage.
check = agreement(model, inputs, run.trace)
for name, ok, dev in check.stages:
    print(f"  {name:<14} {'ok' if ok else 'MISMATCH'}  max deviation {dev}")
print(check.line())

# Communication: measured counters versus the closed-form prediction.
predicted = census(PublicShape.of(model.config), 8)
s = run.stats
print(f"offline bytes {s.phase_bytes('offline')} (predicted {predicted.offline_bytes})")
print(f"online bytes  {s.phase_bytes('online')} (predicted {predicted.online_bytes}), rounds {s.rounds['online']}")
