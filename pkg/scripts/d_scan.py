"""Ion position and axial frequency against fiber distance, with an optional plot.

Runs ``fibercharge analyze`` semantics directly on cached bases for a list of
distances, at calibrated endcap voltages, and writes d_scan.csv.

Usage: python scripts/d_scan.py [--sigma 4.0 8.5] [--d-um 1600 1200 ...] [--plot] [--out DIR]
"""

import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from fibercharge.cache import BasisCache, default_cache_dir
from fibercharge.composer import EndcapVoltages, compose_total
from fibercharge.constants import KHZ, UM
from fibercharge.field_solver import GridSpec, MapSpec
from fibercharge.geometry import ChargeState, TrapConfig, build_geometry, default_fibers
from fibercharge.inference import ScanModel
from fibercharge.landscape import analyze, calibrate_endcaps, fit_axial_law

D_UM = (1600, 1200, 1000, 900, 800, 750, 700, 650, 625, 600, 550)


def simulated_alpha(maps, trap, voltages=(800.0, 1000.0, 1300.0, 1500.0, 1800.0)):
    w = [analyze(compose_total(maps, EndcapVoltages(v, v), ChargeState(), trap), trap.ion_mass,
                 y_window=150 * UM).omega_axial for v in voltages]
    return fit_axial_law(voltages, w).alpha_khz2_per_mv


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sigma", type=float, nargs=2, default=(4.0, 8.5), metavar=("F", "S"))
    p.add_argument("--d-um", type=float, nargs="+", default=D_UM)
    p.add_argument("--x-um", type=float, default=10.0, help="fiber P offset along the axis")
    p.add_argument("--endcap-mean", type=float, default=1500.0)
    p.add_argument("--core-um", type=float, default=20.0)
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--plot", action="store_true", help="also write d_scan.png (needs matplotlib)")
    args = p.parse_args()

    trap = TrapConfig()
    cache = BasisCache(args.cache_dir or default_cache_dir(), GridSpec(core_spacing=args.core_um * UM), MapSpec())
    bases = {}
    for d in args.d_um:
        spec = build_geometry(trap, default_fibers(d_M=2000 * UM, d_P=d * UM, x_P=args.x_um * UM))
        bases[d * UM], _ = cache.get(spec)
    far = bases[max(bases)]
    trap = replace(trap, endcap_voltage_scale=calibrate_endcaps(2.3, simulated_alpha(far, trap)))
    ec = EndcapVoltages(args.endcap_mean, args.endcap_mean)
    model = ScanModel(bases, trap, ec, y_window=150 * UM)

    rows = []
    for pred in model.predict(*args.sigma):
        neutral = analyze(compose_total(bases[pred.d], ec, ChargeState(), trap), trap.ion_mass, y_window=150 * UM)
        rows.append((pred.d / UM, pred.kind, pred.x / UM, pred.omega / (2 * np.pi * KHZ),
                     neutral.omega_axial / (2 * np.pi * KHZ)))
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "d_scan.csv", "w") as fh:
        fh.write("d_um,kind,x_ion_um,f_ax_kHz,f_ax_neutral_kHz\n")
        for r in rows:
            fh.write(f"{r[0]:.1f},{r[1]},{r[2]:.4f},{r[3]:.4f},{r[4]:.4f}\n")
            print(f"d = {r[0]:7.1f} um  {r[1]:10s}  x = {r[2]:9.2f} um  f_ax = {r[3]:7.2f} kHz "
                  f"(neutral {r[4]:.2f})")

    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        d, kind, x, f, f0 = zip(*rows)
        fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(5, 6))
        ax1.plot(d, x, "o-")
        ax1.set_ylabel("ion position x (um)")
        ax2.plot(d, f, "o-", label="charged")
        ax2.plot(d, f0, "s--", label="neutral")
        ax2.set_xlabel("fiber distance d_P (um)")
        ax2.set_ylabel("axial frequency (kHz)")
        ax2.legend()
        for a in (ax1, ax2):
            for di, k in zip(d, kind):
                if k != "single":
                    a.axvspan(di - 12, di + 12, color="orange" if k == "transition" else "grey", alpha=0.2)
        fig.tight_layout()
        fig.savefig(args.out / "d_scan.png", dpi=150)
        print(f"wrote {args.out / 'd_scan.png'}")


if __name__ == "__main__":
    main()
