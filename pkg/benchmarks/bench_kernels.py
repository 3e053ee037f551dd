"""Compare the compiled and pure-NumPy kernel backends.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on identical inputs under both backends; the outputs are
checked for exact equality before timing is reported. An end-to-end forest
fit is timed in a subprocess per backend, since the backend is fixed at import.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from cardioresp._kernels import _pykernels

try:
    from cardioresp._kernels import _ckernels
except ImportError:
    _ckernels = None

FOREST_SNIPPET = """
import time, numpy as np
from cardioresp._kernels import BACKEND
from cardioresp.forest import Hyperparameters, fit_forest_arrays
rng = np.random.default_rng(0)
X = rng.normal(size=(400, 79)); y = (X[:, 0] + rng.normal(size=400) > 1).astype(int)
t = time.perf_counter()
fit_forest_arrays(X, y, Hyperparameters(n_trees=100, seed=0), "brf")
print(BACKEND, time.perf_counter() - t)
"""


def _inputs(rng):
    X = np.ascontiguousarray(rng.normal(size=(400, 79)))
    y = rng.integers(0, 2, 400).astype(np.int64)
    idx = np.arange(400, dtype=np.intp)
    order = rng.permutation(79).astype(np.intp)
    # a complete depth-8 tree over random features for apply_tree
    depth = 8
    n_internal = 2**depth - 1
    n_nodes = 2 ** (depth + 1) - 1
    feature = np.full(n_nodes, -1, dtype=np.intp)
    feature[:n_internal] = rng.integers(0, 79, n_internal)
    threshold = np.zeros(n_nodes)
    threshold[:n_internal] = rng.normal(size=n_internal) * 0.3
    left = np.full(n_nodes, -1, dtype=np.intp)
    right = np.full(n_nodes, -1, dtype=np.intp)
    left[:n_internal] = 2 * np.arange(n_internal) + 1
    right[:n_internal] = 2 * np.arange(n_internal) + 2
    Xbig = np.ascontiguousarray(rng.normal(size=(20000, 79)))
    p = rng.random(15000)
    return {
        "best_split (400x79, all features)": (
            "best_split", (X, y, idx, order, 79, 1)),
        "apply_tree (20000 rows, depth 8)": (
            "apply_tree", (Xbig, feature, threshold, left, right)),
        "trailing_median (15000 samples, window 1500)": (
            "trailing_median", (p, 1500, 1600)),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b), equal_nan=True)


def _forest_time(pure):
    env = dict(os.environ)
    if pure:
        env["CARDIORESP_PURE_PYTHON"] = "1"
    else:
        env.pop("CARDIORESP_PURE_PYTHON", None)
    out = subprocess.run([sys.executable, "-c", FOREST_SNIPPET], env=env, check=True,
                         capture_output=True, text=True).stdout.split()
    return out[0], float(out[1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`")
        return 1
    cases = _inputs(np.random.default_rng(0))
    print(f"{'kernel':48s} {'python (ms)':>12s} {'cython (ms)':>12s} {'speedup':>8s}")
    for label, (name, call_args) in cases.items():
        py, cy = getattr(_pykernels, name), getattr(_ckernels, name)
        if not _same(py(*call_args), cy(*call_args)):
            print(f"{label}: backends disagree")
            return 1
        t_py = min(timeit.repeat(lambda: py(*call_args), number=1, repeat=args.repeat))
        t_cy = min(timeit.repeat(lambda: cy(*call_args), number=1, repeat=args.repeat))
        print(f"{label:48s} {1e3 * t_py:12.2f} {1e3 * t_cy:12.2f} {t_py / t_cy:7.1f}x")
    (b_py, t_py), (b_cy, t_cy) = _forest_time(True), _forest_time(False)
    label = "BRF fit, 100 trees on 400x79"
    print(f"{label:48s} {1e3 * t_py:12.0f} {1e3 * t_cy:12.0f} {t_py / t_cy:7.1f}x")
    assert (b_py, b_cy) == ("python", "cython")
    return 0


if __name__ == "__main__":
    sys.exit(main())
