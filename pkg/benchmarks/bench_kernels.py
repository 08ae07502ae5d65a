"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

import crnhjb._kernels as K
from crnhjb.hamiltonian import CRNHamiltonian
from crnhjb.hjb import Grid
from crnhjb.model import builtin_michaelis_menten


def _best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    ham = CRNHamiltonian(builtin_michaelis_menten(1.3, 0.7, 1.1, 0.9, M=4))
    xs = rng.uniform(0.1, 5.0, (200, 2))
    ps = rng.uniform(-2.0, 2.0, (200, 2))
    frozen = [ham.frozen(x) for x in xs]
    Qs = []
    for _ in range(200):
        Q = rng.uniform(0.1, 2.0, (8, 8))
        np.fill_diagonal(Q, rng.uniform(-5.0, 1.0, 8))
        Qs.append(Q)
    vs = [ham.value_grad(x, 0.5 * p)[1] for x, p in zip(xs[:40], ps[:40])]

    N, C, S = 1681, 11, 4
    f = rng.normal(size=N)
    base = rng.normal(size=(N, C))
    idx = rng.integers(0, N, (N, C, S)).astype(np.int64)
    w = rng.uniform(size=(N, C, S))
    w /= w.sum(axis=-1, keepdims=True)

    X = np.ascontiguousarray(Grid((10.0, 10.0), (30, 30)).nodes())
    us, ws = rng.normal(size=len(X)), rng.normal(size=len(X))

    def perron(mod):
        return lambda: [K.get("perron", mod)(Q) for Q in Qs]

    def crn_eval(mod):
        fn = K.get("crn_eval", mod)
        return lambda: [fn(fz.rates, fz.gx, fz.target, fz.kind, p, 1) for fz, p in zip(frozen, ps)]

    def crn_legendre(mod):
        fn = K.get("crn_legendre", mod)
        return lambda: [fn(fz.rates, fz.gx, fz.target, fz.kind, v, 10.0) for fz, v in zip(frozen, vs)]

    def sl_sweep(mod):
        fn = K.get("sl_sweep", mod)
        return lambda: [fn(f, base, idx, w, 0.95) for _ in range(20)]

    def doubling(mod):
        fn = K.get("doubling_argmax", mod)
        return lambda: fn(us, ws, X, 10.0)

    return {
        "perron (200 x 8x8)": perron,
        "crn_eval (200, |F|=5)": crn_eval,
        "crn_legendre (40)": crn_legendre,
        "sl_sweep (20 x 1681 nodes)": sl_sweep,
        "doubling_argmax (961^2 pairs)": doubling,
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="also write the timings as JSON")
    args = ap.parse_args(argv)
    if "cython" not in K.available():
        print("compiled kernels are not built; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':32s} {'python [s]':>12s} {'cython [s]':>12s} {'speedup':>9s}")
    for name, make in cases(rng).items():
        tp = _best_of(make("python"), args.repeat)
        tc = _best_of(make("cython"), args.repeat)
        rows.append({"kernel": name, "python_s": tp, "cython_s": tc, "speedup": tp / tc})
        print(f"{name:32s} {tp:12.4f} {tc:12.4f} {tp / tc:8.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
