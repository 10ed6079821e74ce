"""Timing comparison of the numba and numpy projector kernels.

Runs forward and adjoint projection on the reference geometry for a few grid
sizes, reports best-of-N wall times per backend plus the maximum relative
difference between their outputs. The numba pass is warmed up first so JIT
compilation is not billed to the timings.

Usage: python3 benchmarks/bench_projector.py [--sizes 64,128,256] [--repeats 3]
"""
import argparse
import time

import numpy as np

from dyntomo.geometry import stempo_geometry
from dyntomo.projector import FanBeamProjector


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def rel_diff(a, b):
    denom = float(np.linalg.norm(a))
    return float(np.linalg.norm(a - b)) / denom if denom else 0.0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--binning", type=int, default=8)
    ap.add_argument("--projections", type=int, default=360)
    ap.add_argument("--sizes", default="64,128,256",
                    help="comma-separated grid sizes")
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    geo = stempo_geometry(binning=args.binning)
    P = args.projections
    angles = np.arange(P) * (360.0 / P)
    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.default_rng(0)

    print(f"geometry: binning {args.binning} (D={geo.detector_count}), "
          f"P={P}, best of {args.repeats}")
    header = (f"{'op':<8}{'n':>5}{'numba ms':>12}{'numpy ms':>12}"
              f"{'speedup':>9}{'rel diff':>11}")
    print(header)
    print("-" * len(header))

    for n in sizes:
        pix = geo.fan_width_at_origin_mm / n
        ops = {name: FanBeamProjector(geo, angles, n, pix, backend=name)
               for name in ("numba", "numpy")}
        img = rng.normal(size=(n, n))
        sino = rng.normal(size=(P, geo.detector_count))
        ops["numba"].forward(img)  # JIT warm-up
        ops["numba"].adjoint(sino)

        out = {k: op.forward(img) for k, op in ops.items()}
        t = {k: best_of(lambda op=op: op.forward(img), args.repeats)
             for k, op in ops.items()}
        print(f"{'forward':<8}{n:>5}{t['numba'] * 1e3:>12.1f}"
              f"{t['numpy'] * 1e3:>12.1f}{t['numpy'] / t['numba']:>8.1f}x"
              f"{rel_diff(out['numba'], out['numpy']):>11.1e}")

        out = {k: op.adjoint(sino) for k, op in ops.items()}
        t = {k: best_of(lambda op=op: op.adjoint(sino), args.repeats)
             for k, op in ops.items()}
        print(f"{'adjoint':<8}{n:>5}{t['numba'] * 1e3:>12.1f}"
              f"{t['numpy'] * 1e3:>12.1f}{t['numpy'] / t['numba']:>8.1f}x"
              f"{rel_diff(out['numba'], out['numpy']):>11.1e}")


if __name__ == "__main__":
    main()
