"""Time the compiled RK4 kernel against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--nodes 513] [--steps 2000]
"""
import argparse
import time

import numpy as np

from sasakiflow import _rk4_py, geometry as geo, kernels
from sasakiflow.flow import FlowConfig


def time_kernel(fn, bg, psi0, dt, steps, q_floor, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        res = fn(bg.rows, bg.weights, bg.c0, bg.kappa, psi0, dt, steps, steps, 10, q_floor)
        best = min(best, time.perf_counter() - t0)
    return best, res


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--nodes", type=int, default=513)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--repeats", type=int, default=3)
    args = p.parse_args(argv)

    bg = geo.build_background(geo.GeometryConfig(grid_nodes=args.nodes))
    psi0 = geo.sample_potential(bg, geo.SampleSpec(), 0).values
    psi0 = psi0 - bg.mean0(psi0)
    dt = 1e-5 * (513 / args.nodes) ** 2
    cfg = FlowConfig(dt=dt, t_max=dt * args.steps, sample_every=args.steps)
    floor = cfg.q_floor(bg)

    py_t, py_res = time_kernel(_rk4_py.rk4_integrate, bg, psi0, dt, args.steps, floor, args.repeats)
    print(f"grid {bg.N} nodes, {args.steps} steps, dt = {dt:.3g}")
    print(f"  python   {1e6 * py_t / args.steps:8.2f} us/step")
    if kernels.BACKEND != "compiled":
        print("  compiled extension not available (set up with pip install -e . --no-build-isolation)")
        return
    c_t, c_res = time_kernel(kernels.rk4_integrate, bg, psi0, dt, args.steps, floor, args.repeats)
    diff = float(np.max(np.abs(c_res["psi"] - py_res["psi"])))
    print(f"  compiled {1e6 * c_t / args.steps:8.2f} us/step  (speedup {py_t / c_t:.1f}x)")
    print(f"  max |psi_compiled - psi_python| = {diff:.2e}")


if __name__ == "__main__":
    main()
