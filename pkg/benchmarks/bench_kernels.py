"""Compare the compiled kernels with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from shoutcomp import _kernels_py

try:
    from shoutcomp import _kernels
except ImportError:
    _kernels = None


def _cases(rng):
    X = rng.standard_normal((1056, 16))
    means = rng.standard_normal((8, 16))
    var = rng.uniform(0.5, 2.0, (8, 16))
    logw = np.log(np.full(8, 1 / 8))
    U = rng.standard_normal((1056, 16))
    iu, ju = np.triu_indices(1056, k=1)
    return {
        "log_joint (1056x16, K=8)": lambda m: m.log_joint(X, means, var, logw),
        "pair_dot (557040 trials)": lambda m: m.pair_dot(U, iu.astype(np.intp), ju.astype(np.intp)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    impls = {"numpy": _kernels_py}
    if _kernels is not None:
        impls["cython"] = _kernels
    else:
        print("compiled extension not built; timing the numpy fallback only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}" + "".join(f"{name:>12}" for name in impls) + "   speedup")
    for label, fn in _cases(rng).items():
        ref = fn(_kernels_py)
        times = {}
        for name, mod in impls.items():
            out = fn(mod)
            assert np.allclose(out, ref, rtol=1e-12, atol=1e-12), name
            times[name] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        speed = f"{times['numpy'] / times['cython']:8.2f}x" if "cython" in times else ""
        print(f"{label:<28}" + "".join(f"{1e3 * t:10.2f}ms" for t in times.values()) + "  " + speed)


if __name__ == "__main__":
    main()
