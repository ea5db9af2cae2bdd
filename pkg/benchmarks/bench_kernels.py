"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel and problem size with the best wall time of each
backend and the speed-up. Both backends get identical inputs.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from kdunloc import _kernels as K


def cases(rng):
    for n in (100, 400, 1000):
        x = rng.normal(size=(n, 10))
        d2 = np.sum((x[:, None] - x[None]) ** 2, axis=2)
        yield "perplexity_search", n, (d2, 30.0)
        p = rng.random((n, n))
        p = p + p.T
        np.fill_diagonal(p, 0)
        yield "tsne_grad", n, (p / p.sum(), rng.normal(size=(n, 2)), 12.0)
    for n in (1000, 10000):
        yield "scaled_manhattan_matrix", n, (rng.normal(size=(n, 31)), rng.normal(size=(6, 31)), rng.uniform(0.1, 1, (6, 31)))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if K.compiled is None:
        raise SystemExit("compiled kernels are not built; reinstall without KDUNLOC_NO_EXT")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'n':>7}{'python ms':>12}{'cython ms':>12}{'speed-up':>10}")
    for name, n, inputs in cases(rng):
        times = []
        for mod in (K.python, K.compiled):
            fn = getattr(mod, name)
            number = 3 if n <= 400 else 1
            t = min(timeit.repeat(lambda: fn(*inputs), number=number, repeat=args.repeat)) / number
            times.append(t * 1e3)
        print(f"{name:<26}{n:>7}{times[0]:>12.2f}{times[1]:>12.2f}{times[0] / times[1]:>9.1f}x")


if __name__ == "__main__":
    main()
