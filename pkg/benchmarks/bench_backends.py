"""Compare the numba kernels against the pure-numpy fallback.

The backend is fixed at import time by ``GPDHP_DISABLE_NUMBA``, so each backend
runs in its own interpreter. Timings exclude the first (compiling) call.

    python3 benchmarks/bench_backends.py --T 20000 --repeats 5
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from gpdhp import _accel
from gpdhp.simulate import make_rng, nb_pmf

T, d_max, repeats = (int(a) for a in sys.argv[1:4])
kernel = 0.6 * nb_pmf(np.arange(1, d_max + 1), 2.0, 0.6)
t = np.arange(1, T + 1)
mu = 1.0 + 1e-4 * t + 0.3 * np.sin(2 * np.pi * t / 52)
counts, _, _ = _accel.simulate_counts(mu, kernel, make_rng(0))
sparse = (counts > 0) & (np.arange(T) % 7 == 0)
sparse_counts = np.where(sparse, counts, 0).astype(np.float64)
rng = np.random.default_rng(1)
A = rng.standard_normal((d_max, d_max))
kf = A @ A.T / d_max

def timed(fn):
    fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best

out = {
    "backend": _accel.BACKEND,
    "simulate_counts": timed(lambda: _accel.simulate_counts(mu, kernel, make_rng(0))),
    "excitation_sum": timed(lambda: _accel.excitation_sum(counts.astype(np.float64), kernel)),
    "lagged_quadform_dense": timed(lambda: _accel.lagged_quadform(counts.astype(np.float64), kf)),
    "lagged_quadform_sparse": timed(lambda: _accel.lagged_quadform(sparse_counts, kf)),
    "checksum": int(counts.sum()),
}
print(json.dumps(out))
"""


def run_backend(disable: bool, T: int, d_max: int, repeats: int) -> dict:
    env = dict(os.environ)
    env["GPDHP_DISABLE_NUMBA"] = "1" if disable else ""
    proc = subprocess.run(
        [sys.executable, "-c", WORKER, str(T), str(d_max), str(repeats)],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main() -> None:
    parser = argparse.ArgumentParser(description="numba vs numpy backend timings")
    parser.add_argument("--T", type=int, default=20_000)
    parser.add_argument("--dmax", type=int, default=365)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--json", help="also write the raw timings here")
    args = parser.parse_args()

    fast = run_backend(False, args.T, args.dmax, args.repeats)
    slow = run_backend(True, args.T, args.dmax, args.repeats)
    print(f"T={args.T} d_max={args.dmax} repeats={args.repeats}")
    print(f"{'kernel':<26}{fast['backend']:>12}{slow['backend']:>12}{'speedup':>10}")
    for key in ("simulate_counts", "excitation_sum", "lagged_quadform_dense", "lagged_quadform_sparse"):
        a, b = fast[key], slow[key]
        print(f"{key:<26}{a * 1e3:>10.2f}ms{b * 1e3:>10.2f}ms{b / a:>9.1f}x")
    same = fast["checksum"] == slow["checksum"]
    print(f"simulated counts identical across backends: {same}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"numba": fast, "numpy": slow}, fh, indent=2)


if __name__ == "__main__":
    main()
