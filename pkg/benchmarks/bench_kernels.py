"""Time the fused triangle pass: numba kernel vs numpy fallback.

Usage:
    python3 benchmarks/bench_kernels.py [--nodes 1000 4000 16000] [--repeat 7]

The same pass feeds every downstream assembly (mass, curvature,
stiffness, shape gradients), so its throughput is the throughput of the
whole geometry layer.  Moderately perturbed tubes are used so no branch
in the kernel sees degenerate input.
"""

import argparse
import time

import numpy as np

from helftube import _kernels
from helftube.surface import build_cylinder_mesh, displace


def perturbed_tube(nodes):
    mesh = build_cylinder_mesh(10.0, 1.0, nodes)
    x = mesh.vertices[mesh.rep_vertices, 0]
    rng = np.random.default_rng(11)
    u = 0.08 * np.cos(2 * np.pi * x / 10.0) + 0.01 * rng.normal(
        size=mesh.ndof)
    return displace(mesh, u)


def best_of(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, nargs="+",
                    default=[1000, 4000, 16000])
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args()

    if not _kernels._HAS_NUMBA:
        print("numba not importable; timing the numpy path only")

    print("%8s %10s %12s %12s %8s" % ("nodes", "triangles", "numba [ms]",
                                      "numpy [ms]", "speedup"))
    for nodes in args.nodes:
        mesh = perturbed_tube(nodes)
        inputs = (mesh.vertices, mesh.triangles, mesh.dofs, mesh.ndof)
        t_py = best_of(_kernels._tri_pass_py, inputs, args.repeat)
        if _kernels._HAS_NUMBA:
            _kernels._tri_pass_nb(*inputs)        # compile outside the clock
            t_nb = best_of(_kernels._tri_pass_nb, inputs, args.repeat)
            print("%8d %10d %12.3f %12.3f %7.1fx"
                  % (nodes, mesh.triangles.shape[0], 1e3 * t_nb,
                     1e3 * t_py, t_py / t_nb))
        else:
            print("%8d %10d %12s %12.3f %8s"
                  % (nodes, mesh.triangles.shape[0], "-", 1e3 * t_py, "-"))


if __name__ == "__main__":
    main()
