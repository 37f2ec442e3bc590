"""Benchmark the JIT kernels against the pure-numpy fallback.

Runs each workload in a fresh subprocess with NESSIM_NUMBA=1 / 0 so both
backends start from a clean import, and prints a timing table.  JIT
compilation happens in an untimed warmup pass.

    python benchmarks/benchmark_kernels.py [--quick]
"""

import argparse
import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, os, time
import numpy as np
from nessim import (ChainParams, IntegratorConfig, Model, State, power_spec,
                    simulate)
from nessim._backend import backend_info
from nessim.scaling_analysis import dissipation_scan

steps = int(os.environ["BENCH_STEPS"])
spec_h = power_spec(one_body=[(0.5, 2)], two_body=[(0.5, 2)])
spec_q = power_spec(one_body=[(1.0, 4), (0.5, 2)], two_body=[(1.0, 4)])
results = {"backend": backend_info()["backend"]}

def timed(name, fn):
    fn()          # warmup (JIT compile)
    t0 = time.perf_counter()
    fn()
    results[name] = time.perf_counter() - t0

params = ChainParams(n=3, d=1, lam=1.0, gamma=1.0, temperatures=(0.5, 0.5))
model = Model(spec_h, params)
cfg = IntegratorConfig(dt=0.01, steps=steps, seed=1, thin=100)
timed("harmonic_strang", lambda: simulate(model, State.zeros(params), cfg))

params_q = ChainParams(n=3, d=1, lam=1.0, gamma=1.0, temperatures=(1.0, 2.0))
model_q = Model(spec_q, params_q)
timed("quartic_strang", lambda: simulate(model_q, State.zeros(params_q), cfg))

cfg_e = IntegratorConfig(scheme="euler_maruyama", dt=0.005, steps=steps,
                         seed=1, thin=100)
timed("harmonic_euler", lambda: simulate(model, State.zeros(params), cfg_e))

params_z = ChainParams(n=4, d=1, lam=1.0, gamma=1.0, temperatures=(0.0, 0.0))
model_z = Model(power_spec(one_body=[(1.0, 4)], two_body=[(1.0, 4)]), params_z)
escale = max(1.0, steps / 2000.0)
timed("dissipation_scan", lambda: dissipation_scan(
    model_z, [1e2 * escale, 1e4 * escale], samples_per_e=2, seed=3,
    dt_policy=lambda e: 1e-4 * e ** (-0.25)))

print(json.dumps(results))
"""


def run_backend(flag: str, steps: int) -> dict:
    env = dict(os.environ, NESSIM_NUMBA=flag, BENCH_STEPS=str(steps))
    out = subprocess.run([sys.executable, "-c", WORKLOAD], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().split("\n")[-1])


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true",
                        help="smaller workloads (for CI smoke runs)")
    args = parser.parse_args()
    steps = 20_000 if args.quick else 500_000

    print(f"workload: {steps} integrator steps per case")
    numba_res = run_backend("1", steps)
    numpy_res = run_backend("0", steps)
    assert numba_res["backend"] == "numba", "numba backend unavailable"
    assert numpy_res["backend"] == "numpy"

    names = [k for k in numba_res if k != "backend"]
    width = max(len(n) for n in names)
    print(f"{'case':<{width}}  {'numba [s]':>10}  {'numpy [s]':>10}  {'speedup':>8}")
    for name in names:
        tj, tp = numba_res[name], numpy_res[name]
        print(f"{name:<{width}}  {tj:>10.3f}  {tp:>10.3f}  {tp / tj:>7.1f}x")


if __name__ == "__main__":
    main()
