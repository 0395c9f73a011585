"""Time the compiled and NumPy objective kernels on preset-sized sensors.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from so3cover import kernels
from so3cover.density import MixtureDensity
from so3cover.geometry import Environment, Sensor
from so3cover.manifold import expm_skew, hat
from so3cover.objective import ObjectiveParams, _kernel_args, mission_mask


def setup(grid, stride):
    env = Environment.rectangle(10.0, 9.411765, 7.058824, 1.05)
    s = Sensor(0, (1.0, -0.5, 6.0), 3.4e-3, 6.4e-3, 4.8e-3, grid, grid, weights="center")
    params = ObjectiveParams(np.diag([0.01, 0.01, 1.0]), stride=stride)
    R = expm_skew(hat([0.1, -0.05, 0.2]))
    d = MixtureDensity(1.0, [0.3, 0.2, 0.25], [[1e-3, 0], [-1e-3, 5e-4], [0, -1e-3]],
                       [np.diag([1e6, 3e5]), np.array([[5e5, 1e5], [1e5, 4e5]]), np.eye(2) * 8e5])
    idx = params.pixel_subset(s)
    return R, _kernel_args(s, params, env, d, idx, mission_mask(s, env, R, idx))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=200)
    args = p.parse_args()
    impls = kernels.backends()
    if "cython" not in impls:
        print("compiled kernels not built; only the NumPy backend is available")
    print("%-10s %-8s %12s %12s" % ("pixels", "backend", "value us", "grad us"))
    for grid, stride in ((11, 1), (21, 2), (21, 1), (41, 1)):
        R, a = setup(grid, stride)
        n = len(a[0]) if hasattr(a[0], "__len__") else grid * grid
        times = {}
        for name, (value, value_grad) in impls.items():
            tv = min(timeit.repeat(lambda: value(R, R, *a), number=args.repeat, repeat=3))
            tg = min(timeit.repeat(lambda: value_grad(R, *a), number=args.repeat, repeat=3))
            times[name] = (tv, tg)
            print("%-10d %-8s %12.1f %12.1f" % (n, name, 1e6 * tv / args.repeat, 1e6 * tg / args.repeat))
        if len(times) == 2:
            (pv, pg), (cv, cg) = times["python"], times["cython"]
            print("%-10s %-8s %11.1fx %11.1fx" % ("", "speedup", pv / cv, pg / cg))


if __name__ == "__main__":
    main()
