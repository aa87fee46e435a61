"""Compare the numba kernels with the numpy fallback.

Each backend runs in its own interpreter because the backend is fixed at
import time by ENTROSTAT_DISABLE_NUMBA. Compilation is excluded by a warm-up
call (and numba's on-disk cache).

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from entrostat import _accel, coulomb, sampling

repeat = int(sys.argv[1])


def best(fn):
    fn()  # warm-up (compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


gen = np.random.default_rng(1)
lam40 = gen.dirichlet(np.ones(40))
n_mc, steps = 16, 20_000
draws = sampling._draws(np.random.default_rng(2), n_mc, steps)
start = np.random.default_rng(3).dirichlet(np.ones(n_mc))


def mcmc():
    out = np.empty((steps // 256, n_mc))
    sampling._chain_kernel(start.copy(), 0.0, 0.01, *draws, 256, out, 0)


def energy():
    for _ in range(200):
        coulomb.energy_and_gradient(lam40, -2.0, 40)


def minimize():
    coulomb.minimize_free_energy(30, -1.5, coulomb.typical_seed(30, -1.5))


print(json.dumps({
    "numba": _accel.USE_NUMBA,
    "mcmc_20k_steps_n16_s": best(mcmc),
    "energy_grad_200x_n40_s": best(energy),
    "minimize_n30_s": best(minimize),
}))
"""


def run(disable: bool, repeat: int) -> dict:
    env = dict(os.environ, ENTROSTAT_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    fast, slow = run(False, args.repeat), run(True, args.repeat)
    print(f"{'kernel':28s} {'numba [s]':>12s} {'numpy [s]':>12s} {'speed-up':>9s}")
    for key in ("mcmc_20k_steps_n16_s", "energy_grad_200x_n40_s", "minimize_n30_s"):
        print(f"{key:28s} {fast[key]:12.4g} {slow[key]:12.4g} {slow[key] / fast[key]:9.1f}")
    if not fast["numba"]:
        print("note: numba unavailable, both columns used the numpy path")


if __name__ == "__main__":
    main()
