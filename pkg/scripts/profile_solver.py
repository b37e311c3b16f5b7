#!/usr/bin/env python3
"""Time kernel construction and solver sweeps across state-space sizes."""

import argparse
import time

import numpy as np

from relay_aoi.core import SystemConfig
from relay_aoi.kernel import build_kernel
from relay_aoi.solver import ScanPlan, SolverConfig, bisect, cost_matrix, rvia_sweep


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--bounds", default="3,4,5,6,8,10")
    parser.add_argument("--sources", type=int, default=2)
    args = parser.parse_args()

    print(f"{'N':>3} {'states':>8} {'nnz':>10} {'build s':>8} {'sweep ms':>9} {'bisect s':>9}")
    for bound in (int(v) for v in args.bounds.split(",")):
        cfg = SystemConfig(
            args.sources, (0.5,) * args.sources, (1.0,) * args.sources,
            0.7, 0.8, 1.0, aoi_bound=bound,
        )
        t0 = time.perf_counter()
        kern = build_kernel(cfg)
        build_s = time.perf_counter() - t0
        costs = cost_matrix(kern, 1.0, cfg)
        plan = ScanPlan(kern.indexer)
        betas = np.array([a.beta for a in kern.actions], dtype=np.int64)
        h = np.zeros(kern.num_states)
        for _ in range(3):
            _, h, _, _ = rvia_sweep(h, kern, costs, 0, plan, betas, True)
        t0 = time.perf_counter()
        for _ in range(10):
            _, h, _, _ = rvia_sweep(h, kern, costs, 0, plan, betas, True)
        sweep_ms = (time.perf_counter() - t0) / 10 * 1e3
        t0 = time.perf_counter()
        bisect(kern, cfg, SolverConfig(zeta=0.1, epsilon=1e-3))
        bisect_s = time.perf_counter() - t0
        nnz = sum(m.nnz for m in kern.matrices)
        print(f"{bound:>3} {kern.num_states:>8} {nnz:>10} {build_s:>8.2f} {sweep_ms:>9.2f} {bisect_s:>9.1f}")


if __name__ == "__main__":
    main()
