"""Compare the compiled and NumPy back-ends of the hot kernels.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Both back-ends are imported directly, so the comparison does not depend on
which one ``npqr.kernels`` selected.
"""

from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from npqr import _pykernels
from npqr.basis import BSplineBasis

try:
    from npqr import _ckernels
except ImportError:
    _ckernels = None


def cases(rng: np.random.Generator):
    """Yield ``(name, args)`` for each kernel at a few problem sizes."""
    for n in (2000, 20000):
        basis = BSplineBasis(3, tuple(np.linspace(0.0, 1.0, 12)))
        x = rng.random(n)
        for deriv in (0, 1):
            yield f"bspline_design n={n} deriv={deriv}", "bspline_design", (basis.knots, 3, x, deriv)
    for n, m, B in ((500, 8, 32), (2000, 30, 32)):
        Z = np.ascontiguousarray(rng.normal(size=(n, m)))
        U = rng.random((B, n))
        taus = np.arange(1, 25) / 25
        yield f"score_process n={n} m={m} B={B} T=24", "score_process", (Z, U, taus)


def best_time(fn, args, repeat: int) -> float:
    timer = timeit.Timer(lambda: fn(*args))
    loops, _ = timer.autorange()
    return min(timer.repeat(repeat, loops)) / loops


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="also write the results as JSON")
    args = p.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; only the NumPy back-end is available", file=sys.stderr)

    rows = []
    print(f"{'case':<40} {'numpy [ms]':>12} {'cython [ms]':>12} {'speed-up':>9}")
    for label, name, kargs in cases(np.random.default_rng(args.seed)):
        t_py = best_time(getattr(_pykernels, name), kargs, args.repeat)
        t_c = best_time(getattr(_ckernels, name), kargs, args.repeat) if _ckernels else float("nan")
        if _ckernels is not None:
            np.testing.assert_allclose(getattr(_ckernels, name)(*kargs), getattr(_pykernels, name)(*kargs),
                                       rtol=1e-10, atol=1e-10)
        rows.append({"case": label, "numpy_s": t_py, "cython_s": t_c, "speedup": t_py / t_c})
        print(f"{label:<40} {1e3 * t_py:>12.3f} {1e3 * t_c:>12.3f} {t_py / t_c:>8.1f}x")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
