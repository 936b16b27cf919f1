"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeats 5] [--json out.json]

Each kernel is checked for agreement between backends before timing. Times
are the best of ``--repeats`` runs, in milliseconds per call.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from enp_lab import kernels
from enp_lab.env import EnvConfig, generate_layout


def _cases(rng):
    k, d, iters = 5, 32, 15
    s0 = rng.uniform(-1, 1, size=(k, d))
    w = rng.standard_normal(d)
    noise = rng.normal(0, 0.1, size=(iters, k, d))
    path = rng.integers(0, 8, size=(25, 2))
    ref = rng.integers(0, 8, size=(12, 2))
    layout = generate_layout(0, EnvConfig(width=16, height=16))
    goal = next(iter(layout.landmarks.values()))
    return {
        "sgld_linear_head (K=5, D=32, I=15)": lambda impl: kernels.sgld_linear_head(
            s0, w, 0.1, 1.125, noise, 1.0, impl=impl
        ),
        "dtw_manhattan (25 x 12)": lambda impl: kernels.dtw_manhattan(path, ref, impl=impl),
        "bfs_distances (16 x 16)": lambda impl: kernels.bfs_distances(layout.free, goal, impl=impl),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def run(repeats=5):
    compiled = kernels.compiled_backend()
    py = kernels.python_backend()
    rows = []
    for name, fn in _cases(np.random.default_rng(0)).items():
        row = {"kernel": name}
        backends = [("python", py)] + ([("cython", compiled)] if compiled is not None else [])
        outputs = {}
        for label, impl in backends:
            timer = timeit.Timer(lambda: fn(impl))
            n, _ = timer.autorange()
            best = min(timer.repeat(repeat=repeats, number=n)) / n
            row[f"{label}_ms"] = best * 1e3
            outputs[label] = fn(impl)
        if compiled is not None:
            row["speedup"] = row["python_ms"] / row["cython_ms"]
            row["agree"] = bool(_same(outputs["python"], outputs["cython"]))
        rows.append(row)
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--json", help="also write results to this file")
    args = parser.parse_args(argv)
    if kernels.compiled_backend() is None:
        print("compiled extension not built; timing the fallback only", file=sys.stderr)
    rows = run(args.repeats)
    print(f"{'kernel':38s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}  agree")
    for r in rows:
        print(
            f"{r['kernel']:38s} {r['python_ms']:10.4f} {r.get('cython_ms', float('nan')):10.4f} "
            f"{r.get('speedup', float('nan')):8.1f}  {r.get('agree', '-')}"
        )
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
