"""Check that the grounded box is large enough: axial frequency change at 1.5x box size.

Usage: python scripts/box_sensitivity.py [--factor 1.5] [--core-um 20]
"""

import argparse

import numpy as np

from fibercharge.cache import BasisCache, default_cache_dir
from fibercharge.composer import EndcapVoltages, compose_total
from fibercharge.constants import KHZ, UM
from fibercharge.field_solver import EC_LEFT, EC_RIGHT, RF, GridSpec, MapSpec
from fibercharge.geometry import ChargeState, Domain, TrapConfig, build_geometry, default_fibers
from fibercharge.landscape import analyze


def axial_khz(cache, trap, domain):
    spec = build_geometry(trap, default_fibers(d_M=2000 * UM, d_P=1600 * UM, x_P=10 * UM), domain=domain)
    maps, _ = cache.get(spec, [RF, EC_LEFT, EC_RIGHT])
    em = compose_total(maps, EndcapVoltages(trap.endcap_left, trap.endcap_right), ChargeState(), trap)
    return analyze(em, trap.ion_mass, y_window=150 * UM).omega_axial / (2 * np.pi * KHZ)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--factor", type=float, default=1.5)
    p.add_argument("--core-um", type=float, default=20.0)
    p.add_argument("--cache-dir", default=None)
    args = p.parse_args()
    trap = TrapConfig()
    cache = BasisCache(args.cache_dir or default_cache_dir(), GridSpec(core_spacing=args.core_um * UM), MapSpec())
    base = axial_khz(cache, trap, Domain())
    big = axial_khz(cache, trap, Domain().scaled(args.factor))
    change = abs(big / base - 1)
    print(f"f_ax = {base:.2f} kHz (box), {big:.2f} kHz ({args.factor}x box): change {change:.3%}")
    print("box size adequate" if change < 0.01 else "box too small: enlarge Domain")


if __name__ == "__main__":
    main()
