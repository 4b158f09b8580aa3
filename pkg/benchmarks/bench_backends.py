"""Time the compiled and pure-Python gene kernels on the same inputs.

    python benchmarks/bench_backends.py [--n 20000] [--steps 20000] [--repeat 3]

Prints one line per kernel and backend with the best wall time, the
throughput and the speed-up of the compiled backend.
"""
import argparse
import json
import time

import numpy as np

from pdmpkit._fast import compiled_backend, python_backend
from pdmpkit.models import GeneExpressionParams


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20_000, help="starts for batch inversion")
    ap.add_argument("--steps", type=int, default=20_000, help="embedded chain steps")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", action="store_true", help="print results as JSON")
    args = ap.parse_args(argv)

    P = GeneExpressionParams().as_array()
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 5, (args.n, 2))
    targets = rng.exponential(size=args.n)
    chain_targets = rng.exponential(size=args.steps)
    thetas = rng.exponential(size=args.steps)
    x0 = np.array([1.0, 1.0])

    cases = {
        "hazard_invert": (args.n, lambda b: b.hazard_invert(X, targets, P)),
        "chain": (args.steps, lambda b: b.chain(x0, chain_targets, thetas, P)),
    }
    backends = {"python": python_backend}
    if compiled_backend is not None:
        backends["cython"] = compiled_backend

    rows = []
    for kernel, (count, call) in cases.items():
        timing = {name: best_time(lambda: call(b), args.repeat) for name, b in backends.items()}
        for name, sec in timing.items():
            rows.append({"kernel": kernel, "backend": name, "items": count, "seconds": sec,
                         "items_per_s": count / sec,
                         "speedup": timing["python"] / sec})
    if args.json:
        print(json.dumps(rows, indent=2))
        return
    if compiled_backend is None:
        print("compiled backend not built; timing the Python fallback only")
    for r in rows:
        print(f"{r['kernel']:14s} {r['backend']:7s} {r['seconds']:8.3f} s "
              f"{r['items_per_s']:12.0f} items/s  x{r['speedup']:.1f}")


if __name__ == "__main__":
    main()
