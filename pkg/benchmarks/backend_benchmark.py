#!/usr/bin/env python3
"""Compare the numba and numpy rollout-kernel backends.

Runs the batched rollout-and-cost kernel at benchmark-scale problem sizes in
two subprocesses (one per backend, selected via the FLOWPLAN_NO_NUMBA
environment variable), checks that the outputs agree, and reports wall-clock
timings including the numba warm-up (JIT compilation) cost.

Usage:
    python3 benchmarks/backend_benchmark.py [--repeats 20]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

CASES = [
    # (K, N, M traffic vehicles)
    (200, 80, 0),
    (200, 80, 4),
    (1000, 80, 4),
]

_WORKER = r"""
import json, os, sys, time
import numpy as np
from flowplan import kernels

payload = json.load(open(sys.argv[1]))
repeats = payload["repeats"]
out = {"backend": kernels.backend(), "cases": []}
rng = np.random.default_rng(0)
for K, N, M in payload["cases"]:
    x0 = np.array([0.0, 0.0, 0.0, 6.0, 0.0])
    U = rng.normal(scale=[0.1, 1.5], size=(K, N, 2))
    goal = np.array([50.0, 0.0])
    xs = np.linspace(-10.0, 120.0, 53)
    path_xy = np.stack([xs, 0.5 * np.sin(xs / 20.0)], axis=1)
    traffic = rng.normal(scale=[20.0, 1.0, 0.1], size=(M, N, 3)) + [30.0, 0.0, 0.0]
    args = (x0, U, 0.1, 2.7, 0.45, 6.0, goal, path_xy, traffic, 6.0, 2.0, 1e-3,
            np.array([0.5, 10.0, 0.06, 1.0, 4.5]))
    t0 = time.perf_counter()
    b, s = kernels.rollout_costs(*args)
    warmup = time.perf_counter() - t0
    t0 = time.perf_counter()
    for _ in range(repeats):
        b, s = kernels.rollout_costs(*args)
    per_call = (time.perf_counter() - t0) / repeats
    out["cases"].append({
        "K": K, "N": N, "M": M,
        "warmup_s": warmup, "per_call_s": per_call,
        "checksum": float(s.sum()), "s0": float(s[0]),
    })
json.dump(out, open(payload["out"], "w"))
"""


def run_backend(no_numba: bool, repeats: int) -> dict:
    with tempfile.TemporaryDirectory() as td:
        payload = {"cases": CASES, "repeats": repeats, "out": str(Path(td) / "out.json")}
        pfile = Path(td) / "payload.json"
        pfile.write_text(json.dumps(payload))
        env = dict(os.environ, FLOWPLAN_NO_NUMBA="1" if no_numba else "0")
        subprocess.run([sys.executable, "-c", _WORKER, str(pfile)], check=True, env=env)
        return json.loads(Path(payload["out"]).read_text())


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    numba_res = run_backend(no_numba=False, repeats=args.repeats)
    numpy_res = run_backend(no_numba=True, repeats=args.repeats)
    if numba_res["backend"] == numpy_res["backend"]:
        print("note: numba unavailable; both runs used the numpy backend")

    print(f"{'case':>16} {'numba/call':>12} {'numpy/call':>12} {'speedup':>8} {'numba warmup':>13}")
    for a, b in zip(numba_res["cases"], numpy_res["cases"]):
        agree = np.isclose(a["checksum"], b["checksum"], rtol=1e-9) and np.isclose(
            a["s0"], b["s0"], rtol=1e-9
        )
        label = f"K={a['K']} N={a['N']} M={a['M']}"
        speedup = b["per_call_s"] / a["per_call_s"]
        print(
            f"{label:>16} {a['per_call_s'] * 1e3:>10.2f}ms {b['per_call_s'] * 1e3:>10.2f}ms "
            f"{speedup:>7.1f}x {a['warmup_s']:>12.2f}s"
            + ("" if agree else "  MISMATCH")
        )
        if not agree:
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
