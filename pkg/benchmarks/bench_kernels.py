"""Time the TV kernels under the numba and numpy backends.

    python3 benchmarks/bench_kernels.py [--sizes 64 128 256] [--repeat 5]

Prints one row per (kernel, size) with the best-of-N wall time for each
backend and the speed-up, after checking the two backends agree.
"""
import argparse
import time

import numpy as np

from proxmcmc import _accel, priors


def best_time(fn, repeat):
    fn()  # warm-up; also triggers numba compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<10}{'size':>6}{'numpy [ms]':>14}{'numba [ms]':>14}{'speed-up':>10}")
    for n in args.sizes:
        x = rng.uniform(0, 255, (n, n))
        cases = {
            "tv": lambda: priors.tv(x),
            # fixed iteration count so both backends do the same work
            "prox_tv": lambda: priors.prox_tv(x, 0.5, 200, 0.0),
        }
        for name, fn in cases.items():
            res, t = {}, {}
            for backend in ("numpy", "numba"):
                _accel.set_backend(backend)
                res[backend] = fn()
                t[backend] = best_time(fn, args.repeat)
            np.testing.assert_allclose(res["numba"], res["numpy"], atol=1e-8)
            print(f"{name:<10}{n:>6}{t['numpy'] * 1e3:>14.3f}{t['numba'] * 1e3:>14.3f}"
                  f"{t['numpy'] / t['numba']:>9.1f}x")
    _accel.set_backend("numba")


if __name__ == "__main__":
    main()
