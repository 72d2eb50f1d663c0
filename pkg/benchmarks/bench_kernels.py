"""Compare the compiled and pure-Python integration kernels.

Usage::

    python benchmarks/bench_kernels.py [--repeat N] [--duration TU]

Each case integrates the same problem with both backends, checks that the
results agree bit for bit and reports the best-of-N wall time.
"""

import argparse
import time

import numpy as np

from pontryagus import kernels

C1, C2 = 0.0505895, 0.0614600
Y0 = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.3, -0.2, 0.1, 0.2, 1.5, 0.1, 0.1])


def cases(duration: float):
    yb = Y0.copy()
    yb[11] = 20.0  # costate with two switches under bang-bang control
    return {
        "augmented, alpha=0": lambda k: k.integrate_augmented(Y0, duration, C1, C2, 0.0, 1.0, 1e-12, 1e-12, 0.0, 1_000_000, True),
        "augmented, alpha=1": lambda k: k.integrate_augmented(yb, duration, C1, C2, 1.0, 1.0, 1e-12, 1e-12, 0.0, 1_000_000, True),
        "thrust arc": lambda k: k.integrate_thrust(Y0[:7].copy(), duration, 0.3, -0.4, 0.1, C1, C2, 1.0, 1e-12, 1e-12, 0.0, 1_000_000),
    }


def best_time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run(repeat: int = 5, duration: float = 8.0) -> list[tuple[str, float, float | None]]:
    backends = kernels.available_backends()
    rows = []
    for name, case in cases(duration).items():
        t_py = best_time(lambda: case(backends["python"]), repeat)
        t_cy = None
        if "cython" in backends:
            a, b = case(backends["cython"]), case(backends["python"])
            for x, y in zip(a, b):
                if not np.array_equal(x, y):
                    raise AssertionError(f"{name}: backends disagree")
            t_cy = best_time(lambda: case(backends["cython"]), repeat)
        rows.append((name, t_py, t_cy))
    return rows


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--duration", type=float, default=8.0, help="integration span in canonical time units")
    args = p.parse_args(argv)
    print(f"{'case':<22}{'python [ms]':>14}{'cython [ms]':>14}{'speed-up':>10}")
    for name, t_py, t_cy in run(args.repeat, args.duration):
        cy = f"{1e3 * t_cy:14.2f}{t_py / t_cy:9.1f}x" if t_cy else f"{'n/a':>14}{'':>10}"
        print(f"{name:<22}{1e3 * t_py:14.2f}{cy}")


if __name__ == "__main__":
    main()
