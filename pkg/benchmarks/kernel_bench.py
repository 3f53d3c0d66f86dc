#!/usr/bin/env python3
"""Compare the compiled kernels against the scipy/numpy fallback on the
solver hot loops: CSR matvec, collective Block-Jacobi apply, and a full
PCG solve of a representative time-step system.

Usage: python benchmarks/kernel_bench.py [--nx 20] [--target 100] [--degree 3]
"""
import argparse
import time

import numpy as np

from polystress import (SolverConfig, agglomerate, build_block_jacobi,
                        build_cartesian_mesh, build_space, build_system,
                        classify_boundary, pcg)
from polystress.assembly import assemble_system
from polystress.kernels import CsrOperator, compiled_available


def timeit(fn, repeat):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--nx", type=int, default=20)
    ap.add_argument("--target", type=int, default=100)
    ap.add_argument("--degree", type=int, default=3)
    ap.add_argument("--dt", type=float, default=1e-7)
    args = ap.parse_args()

    mesh = agglomerate(classify_boundary(build_cartesian_mesh(args.nx, args.nx),
                                         lambda p: p[0] > 1 - 1e-9),
                       args.target, 1)
    space = build_space(mesh, args.degree)
    system = assemble_system(space, 1.0, 10.0)
    astar = build_system(system.m, system.a, args.dt)
    n = astar.shape[0]
    print(f"mesh: {mesh.n_elements} elements, n = {n}, nnz(A*) = {astar.nnz}")
    if not compiled_available():
        print("note: compiled extension not built, fallback only")

    backends = ["fallback"] + (["compiled"] if compiled_available() else [])
    rng = np.random.default_rng(0)
    x = rng.standard_normal(n)
    b = rng.uniform(0.0, 1.0, n)

    rows = []
    for backend in backends:
        op = CsrOperator(astar, backend=backend)
        t_mv = timeit(lambda: op.matvec(x), 200)
        cbj = build_block_jacobi(astar, space, "collective", backend=backend)
        t_bj = timeit(lambda: cbj.apply(x), 200)
        t0 = time.perf_counter()
        _, report = pcg(op, b, cbj, SolverConfig(tol=1e-8, maxit=20000))
        t_solve = time.perf_counter() - t0
        rows.append((backend, t_mv, t_bj, t_solve, report.iterations))

    print(f"{'backend':10s} {'matvec':>12s} {'cbj apply':>12s} {'pcg solve':>12s} {'iters':>7s}")
    for backend, t_mv, t_bj, t_solve, iters in rows:
        print(f"{backend:10s} {t_mv * 1e6:10.1f}us {t_bj * 1e6:10.1f}us "
              f"{t_solve:11.2f}s {iters:7d}")
    if len(rows) == 2:
        print(f"speedup: matvec x{rows[0][1] / rows[1][1]:.2f}, "
              f"cbj x{rows[0][2] / rows[1][2]:.2f}, "
              f"solve x{rows[0][3] / rows[1][3]:.2f}")


if __name__ == "__main__":
    main()
