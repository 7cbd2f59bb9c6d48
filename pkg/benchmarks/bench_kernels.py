"""Time the numba kernels against the pure-numpy paths.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends run in one process through the per-call ``accelerate`` switch;
with ``LSKSVD_NO_NUMBA=1`` only the numpy column is filled.
"""

import argparse
import timeit

import numpy as np

from lsksvd import HAVE_NUMBA
from lsksvd.levelset import curvature_field, init_phi_checkerboard, sussman_reinit
from lsksvd.sparse import batch_omp


def cases(rng):
    D = rng.standard_normal((192, 128))
    D /= np.linalg.norm(D, axis=0)
    X = rng.standard_normal((192, 4096))
    phi = init_phi_checkerboard(256, 256, 3.0, 15.0) * 4.0
    band = np.flatnonzero(np.abs(phi.reshape(-1)) < 12.0)
    rows, cols = np.divmod(band, 256)
    return {
        "batch_omp 192x128, N=4096, rho=8": lambda acc: batch_omp(D, X, 8, accelerate=acc),
        "sussman_reinit 256x256, 10 sweeps": lambda acc: sussman_reinit(phi, 10, accelerate=acc),
        f"curvature on band ({band.size} px)": lambda acc: curvature_field(phi, rows, cols, accelerate=acc),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        t_np = min(timeit.repeat(lambda: fn(False), number=1, repeat=args.repeat)) * 1e3
        if HAVE_NUMBA:
            fn(True)  # compile outside the timed region
            t_nb = min(timeit.repeat(lambda: fn(True), number=1, repeat=args.repeat)) * 1e3
            print(f"{name:40s} {t_np:11.2f} {t_nb:11.2f} {t_np / t_nb:7.1f}x")
        else:
            print(f"{name:40s} {t_np:11.2f} {'-':>11s} {'-':>8s}")


if __name__ == "__main__":
    main()
