"""Compare the compiled and NumPy kernel backends on the hot loops.

Run with ``python3 benchmarks/bench_kernels.py [--repeat R]``. Prints one
line per kernel with the best wall time of each backend, the speed-up and
the largest relative difference between the two results.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from choquardlab import _kernels_py, riesz
from choquardlab.bubble import sphere_area
from choquardlab.grid import build_full_grid, build_radial_grid

try:
    from choquardlab import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _best(fn, repeat: int) -> tuple[float, np.ndarray]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, np.asarray(out)


def cases():
    g = build_radial_grid(128)
    r, s = np.meshgrid(g.nodes, g.nodes, indexing="ij")
    area = sphere_area(2)
    yield "angular_kernel N=3 lam=1 l=0 (128^2 pairs)", lambda k: k.angular_kernel(r.ravel(), s.ravel(), 1.0, 3, 0, area)
    yield "angular_kernel N=3 lam=2 l=1 (128^2 pairs)", lambda k: k.angular_kernel(r.ravel(), s.ravel(), 2.0, 3, 1, area)

    g64 = build_radial_grid(64)

    def assemble(k):
        # the full radial kernel assembly with the backend swapped in
        saved = riesz.kernels
        riesz.kernels = k
        try:
            return riesz._assemble(3, 2.0, g64, 0, 4.0)
        finally:
            riesz.kernels = saved

    yield "radial kernel assembly N=3 lam=2 n=64", assemble

    fg = build_full_grid(16, 7, 3)
    pts = fg.points.reshape(-1, 3)
    w = fg.weights.ravel()
    psi = (1.0 + np.sum(pts**2, axis=-1)) ** -2.5
    ipsi = (1.0 + np.sum(pts**2, axis=-1)) ** -0.5
    yield f"riesz_direct_matrix N=3 ({pts.shape[0]} nodes)", lambda k: k.riesz_direct_matrix(pts, w, psi, 1.0, ipsi)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled backend not built; timing the NumPy backend only")
    print(f"{'kernel':48s} {'numpy [s]':>10s} {'cython [s]':>11s} {'speed-up':>9s} {'max rel diff':>13s}")
    for name, call in cases():
        tp, outp = _best(lambda: call(_kernels_py), args.repeat)
        if _ckernels is None:
            print(f"{name:48s} {tp:10.4f} {'-':>11s} {'-':>9s} {'-':>13s}")
            continue
        tc, outc = _best(lambda: call(_ckernels), args.repeat)
        diff = float(np.max(np.abs(outc - outp)) / np.max(np.abs(outp)))
        print(f"{name:48s} {tp:10.4f} {tc:11.4f} {tp / tc:9.1f} {diff:13.2e}")


if __name__ == "__main__":
    main()
