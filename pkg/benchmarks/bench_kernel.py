"""Time the stepping loop with and without the numba backend.

Each backend runs in its own interpreter, because the choice is fixed at
import time by R5GUARD_DISABLE_JIT.

    python3 benchmarks/bench_kernel.py [--cycles N]
"""

import argparse
import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, sys, time
from r5guard._jit import backend
from r5guard.harness import build as B, corpus as C

cycles = int(sys.argv[1])
image = B.build_image(C.spinner_source(), 0)
B.single_zone(image).run(budget=1000)  # compile / warm up
system = B.single_zone(image, quantum=cycles)
t0 = time.perf_counter()
system.run(budget=cycles)
dt = time.perf_counter() - t0
print(json.dumps({"backend": backend(), "cycles": system.cycles, "seconds": dt}))
"""


def run(disable_jit: bool, cycles: int) -> dict:
    env = dict(os.environ)
    env["R5GUARD_DISABLE_JIT"] = "1" if disable_jit else "0"
    out = subprocess.run([sys.executable, "-c", WORKLOAD, str(cycles)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cycles", type=int, default=2_000_000)
    a = ap.parse_args()
    jit = run(False, a.cycles)
    py = run(True, max(a.cycles // 50, 10_000))
    for r in (jit, py):
        print(f"{r['backend']:>6}: {r['cycles'] / r['seconds'] / 1e6:8.2f} M cycles/s  "
              f"({r['cycles']} cycles in {r['seconds']:.3f}s)")
    print(f"speedup: {(jit['cycles'] / jit['seconds']) / (py['cycles'] / py['seconds']):.0f}x")


if __name__ == "__main__":
    main()
