"""Compare the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--sizes 6 8 10] [--repeat 5]

Each kernel is run on identical inputs by both backends; outputs are checked
to agree before timing. The compiled backend must be built (pip install -e .).
"""

import argparse
import timeit

import numpy as np

from qbm import _kernels_py

try:
    from qbm import _kernels
except ImportError:
    _kernels = None


def _inputs(n, rng):
    d = 2**n
    b = rng.normal(size=n)
    w = np.triu(rng.normal(size=(n, n)), 1)
    gamma = rng.uniform(0.1, 2.0, size=n)
    lam = np.sort(rng.normal(scale=n, size=d))
    lam -= lam[0]
    a = rng.normal(size=(d, d))
    c = rng.normal(size=(d, d))
    return {"b": b, "w": w, "gamma": gamma, "lam": lam, "a": a, "c": c}


def _cases(mod, n, x):
    d = 2**n

    def transverse():
        h = np.zeros((d, d))
        mod.add_transverse(h, x["gamma"], n)
        return h

    return {
        "spin_table": lambda: mod.spin_table(n),
        "ising_diagonal": lambda: mod.ising_diagonal(x["b"], x["w"], n),
        "add_transverse": transverse,
        "loewner_exp": lambda: mod.loewner_exp(x["lam"]),
        "flip_traces": lambda: mod.flip_traces(x["a"], x["c"], n),
    }


def best_time(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05 and number < 10000:
        number *= 4
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[6, 8, 10])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if _kernels is None:
        raise SystemExit("compiled extension not built; run pip install -e . --no-build-isolation")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'n':>4}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for n in args.sizes:
        x = _inputs(n, rng)
        py_cases = _cases(_kernels_py, n, x)
        cy_cases = _cases(_kernels, n, x)
        for name, py_fn in py_cases.items():
            cy_fn = cy_cases[name]
            np.testing.assert_allclose(np.asarray(cy_fn()), np.asarray(py_fn()), rtol=1e-9, atol=1e-9)
            t_py = best_time(py_fn, args.repeat)
            t_cy = best_time(cy_fn, args.repeat)
            print(f"{name:<16}{n:>4}{t_py * 1e3:>12.4f}{t_cy * 1e3:>14.4f}{t_py / t_cy:>10.2f}")


if __name__ == "__main__":
    main()
