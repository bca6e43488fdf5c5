"""Time the compiled kernels against the pure-Python fallback.

Usage: ``python benchmarks/bench_kernels.py [--repeat N]``. Prints one line
per kernel with the best wall time of each backend and the speedup.
"""
import argparse
import math
import timeit

import numpy as np

from least_energy import kernels, radial
from least_energy.mesh import DomainSpec, build_mesh


def cases():
    p, lam, a = 50.0, 0.0, 1.68
    s0 = radial._start_s(p, a)
    u0, v0 = radial._series_start(p, lam, a, math.exp(s0))
    mesh = build_mesh(DomainSpec.disk(1.0), 0.03)
    rng = np.random.default_rng(0)
    n = 20001
    W, E, G = -5.0 * rng.random(n), rng.random(n), rng.random(n) - 0.5
    return {
        "radial_integrate (p=50, ds=1e-3)":
            lambda k: k.radial_integrate(p, lam, s0, 1e-3, 0.0, u0, v0, True),
        "mode_rk4 (k=1, 10^4 steps)":
            lambda k: k.mode_rk4(1, 1e-3, 1e-3, 1.0, 1e-3, 10000),
        f"p1_local ({mesh.n_triangles} triangles)":
            lambda k: k.p1_local(mesh.vertices, mesh.triangles),
        "prufer_sweep (10^4 steps)":
            lambda k: k.prufer_sweep(1.0, 0.5, 0.3, W, E, G, 1e-3, 1e9),
        "linear_sweep (10^4 steps)":
            lambda k: k.linear_sweep(1.0, 0.5, 0.1, 1.0, W, E, G, 1e-3),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    impls = kernels.backends()
    if "cython" not in impls:
        print("compiled kernels not built; timing the Python fallback only")
    print(f"{'kernel':<40}" + "".join(f"{name:>12}" for name in impls) + "   speedup")
    for label, fn in cases().items():
        best = {name: min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
                for name, mod in impls.items()}
        speed = f"{best['python'] / best['cython']:9.1f}x" if "cython" in best else ""
        print(f"{label:<40}" + "".join(f"{t:11.4f}s" for t in best.values()) + "  " + speed)


if __name__ == "__main__":
    main()
