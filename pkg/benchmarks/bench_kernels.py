"""Compare the compiled and pure-Python scan kernels on one grouping scan.

    python benchmarks/bench_kernels.py --h 7 --n 500 --family gaussian
"""
import argparse
import time

import numpy as np

from magscan import kernels
from magscan.glm import ETA_MAX, IRLS_MAXIT, IRLS_TOL, RANK_TOL, Family
from magscan.grouping import label_matrix


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--h", type=int, default=7)
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--family", default="gaussian")
    ap.add_argument("--max-order", type=int, default=None)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    fam = Family.parse(args.family)
    carried = (rng.random((args.n, args.h)) < 0.35).astype(np.uint8)
    base = np.ones((args.n, 1))
    eta = 0.5 * carried[:, 0] - 0.3 * carried[:, 1]
    if fam is Family.GAUSSIAN:
        y = eta + rng.standard_normal(args.n)
    elif fam is Family.BINOMIAL:
        y = (rng.random(args.n) < 1 / (1 + np.exp(-eta))).astype(float)
    else:
        y = rng.poisson(np.exp(eta)).astype(float)
    top = args.max_order or args.h
    labels = np.vstack([label_matrix(args.h, j) for j in range(1, top + 1)])

    results = {}
    for name, mod in kernels.available_backends().items():
        t0 = time.perf_counter()
        ll, st = mod.scan_labels(carried, base, y, labels, fam.code, IRLS_TOL, IRLS_MAXIT,
                                 ETA_MAX, RANK_TOL)
        dt = time.perf_counter() - t0
        results[name] = (ll, st, dt)
        print(f"{name:>8}: {labels.shape[0]} fits in {dt:.3f} s "
              f"({labels.shape[0] / dt:,.0f} fits/s)")
    if {"cython", "python"} <= results.keys():
        (l1, s1, t1), (l2, s2, t2) = results["cython"], results["python"]
        ok = (s1 == 0) & (s2 == 0)
        print(f"status agreement: {np.mean(s1 == s2):.4f}; "
              f"max |d loglik| = {np.max(np.abs(l1[ok] - l2[ok])):.2e}; "
              f"speed-up {t2 / t1:.1f}x")


if __name__ == "__main__":
    main()
