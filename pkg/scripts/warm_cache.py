"""Solve and cache the basis maps used by the acceptance suite and the example scans.

Usage: python scripts/warm_cache.py [--cache-dir DIR] [--skip-default-grid]
"""

import argparse
import logging
import time

from fibercharge.cache import BasisCache, default_cache_dir
from fibercharge.constants import UM
from fibercharge.field_solver import EC_LEFT, EC_RIGHT, RF, GridSpec, MapSpec
from fibercharge.geometry import TrapConfig, build_geometry, default_fibers

COARSE = GridSpec(core_spacing=20 * UM)
SCAN_D_UM = (1600, 1200, 1000, 900, 800, 750, 700, 650, 625, 600, 550)
SYMMETRIC_D_UM = (700, 650, 600, 550)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--skip-default-grid", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    directory = args.cache_dir or default_cache_dir()
    trap = TrapConfig()
    jobs = []
    if not args.skip_default_grid:
        spec = build_geometry(trap, default_fibers(d_M=2000 * UM, d_P=1600 * UM, x_P=10 * UM))
        jobs.append((BasisCache(directory, GridSpec(), MapSpec()), spec, [RF, EC_LEFT, EC_RIGHT]))
    coarse = BasisCache(directory, COARSE, MapSpec())
    for d in SCAN_D_UM:
        jobs.append((coarse, build_geometry(trap, default_fibers(d_M=2000 * UM, d_P=d * UM, x_P=10 * UM)), None))
    for d in SYMMETRIC_D_UM:
        jobs.append((coarse, build_geometry(trap, default_fibers(d_M=2000 * UM, d_P=d * UM)), None))
    for cache, spec, tags in jobs:
        t0 = time.perf_counter()
        cache.get(spec, tags)
        print(f"{spec.hash()} d_P = {spec.fiber('P').placement.d / UM:.0f} um, "
              f"core {cache.grid.core_spacing / UM:.0f} um: {time.perf_counter() - t0:.0f} s", flush=True)


if __name__ == "__main__":
    main()
