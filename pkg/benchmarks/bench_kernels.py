"""Compare the compiled and pure-Python sampling kernels.

Times each inner kernel on identical inputs, then an end-to-end truncated
MVN draw in a fresh interpreter per backend (the backend is fixed at
import). Run with ``python3 benchmarks/bench_kernels.py [--repeat R] [--json PATH]``.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from starcount import _pykernels as py

try:
    from starcount import _ckernels as cy
except ImportError:
    cy = None

END_TO_END = """
import time, numpy as np
from starcount import gauss, kernels
from starcount.gauss import BoxRegion, GaussianParams
rng = np.random.default_rng(0)
n = {n}
A = rng.standard_normal((n, n)) / np.sqrt(n)
cov = A @ A.T + np.eye(n)
box = BoxRegion(np.full(n, 0.2), np.full(n, np.inf))
gauss.sample_tmvn(GaussianParams(np.zeros(n), cov), box, 10, rng)
t0 = time.perf_counter()
gauss.sample_tmvn(GaussianParams(np.zeros(n), cov), box, {count}, rng)
print(kernels.BACKEND, time.perf_counter() - t0)
"""


def kernel_cases(rng):
    n, N = 20, 2000
    lo = rng.normal(-1, 1, 100_000)
    hi = lo + rng.uniform(0.1, 3, 100_000)
    u = rng.random(100_000)
    L = np.tril(rng.standard_normal((n, n)), -1) * 0.2
    lb = rng.normal(-1, 0.5, n)
    ub = lb + 2.0
    mu = rng.normal(0, 0.2, n)
    U = rng.random((N, n))
    m = 10
    B = rng.standard_normal((m, m))
    Q = B @ B.T + m * np.eye(m)
    G = rng.random((400, m))
    return {
        "ln_normal_prob (1e5)": lambda k: k.ln_normal_prob(lo, hi),
        "truncnorm_icdf (1e5)": lambda k: k.truncnorm_icdf(lo, hi, u),
        "tilted_proposals (2000x20)": lambda k: k.tilted_proposals(L, lb, ub, mu, U),
        "gibbs_box (400 sweeps, d=10)": lambda k: k.gibbs_box(Q, np.zeros(m), np.full(m, -1.0),
                                                             np.full(m, 1.0), np.zeros(m), G, 100),
    }


def best_time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def end_to_end(pure: bool, n: int, count: int) -> float:
    env = dict(os.environ)
    if pure:
        env["STARCOUNT_PURE_PYTHON"] = "1"
    else:
        env.pop("STARCOUNT_PURE_PYTHON", None)
    out = subprocess.run([sys.executable, "-c", END_TO_END.format(n=n, count=count)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.split()[1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write results to this path")
    args = ap.parse_args(argv)
    if cy is None:
        print("compiled kernels are not built; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(1)
    results = []
    print(f"{'kernel':34s} {'python s':>10s} {'cython s':>10s} {'speedup':>8s}")
    for name, fn in kernel_cases(rng).items():
        tp = best_time(lambda: fn(py), args.repeat)
        tc = best_time(lambda: fn(cy), args.repeat)
        results.append({"kernel": name, "python": tp, "cython": tc})
        print(f"{name:34s} {tp:10.4f} {tc:10.4f} {tp / tc:7.1f}x")
    for n, count in ((10, 5000), (50, 2000)):
        tp = end_to_end(True, n, count)
        tc = end_to_end(False, n, count)
        name = f"sample_tmvn n={n}, {count} draws"
        results.append({"kernel": name, "python": tp, "cython": tc})
        print(f"{name:34s} {tp:10.4f} {tc:10.4f} {tp / tc:7.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
