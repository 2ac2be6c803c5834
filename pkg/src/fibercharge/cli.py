"""Command-line front end: ``fibercharge <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .cache import BasisCache, tags_for
from .composer import EndcapVoltages, compose_total
from .config import RunConfig, load_config
from .constants import KHZ, UM
from .field_solver import SolverError, StaleBasisError
from .geometry import GeometryError
from .inference import (
    ConvergenceError,
    FiberScanDataset,
    InferenceError,
    ScanModel,
    grid_scan,
    position_offset_sweep,
    refine,
)
from .landscape import LandscapeError, analyze, calibrate_endcaps, fit_axial_law
from .patch import (
    AxialScan,
    PatchError,
    PatchPotential,
    SchemaError,
    _read_table,
    mean_patch,
    reconstruct_from_frequencies,
    reconstruct_from_positions,
)
from .synthdata import POSITIONER_M, POSITIONER_P, generate_dataset

EXIT_OK = 0
EXIT_SCHEMA = 3
EXIT_SOLVER = 4
EXIT_CONVERGENCE = 5
EXIT_STALE = 6
EXIT_GEOMETRY = 7

TWO_PI_KHZ = 2 * np.pi * KHZ
log = logging.getLogger("fibercharge")


def _dump(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(args, cfg: RunConfig, geometry_hashes):
    return {
        "tool": "fibercharge",
        "version": __version__,
        "command": args.command,
        "config": str(args.config) if args.config else None,
        "cache_dir": str(args.cache_dir) if args.cache_dir else None,
        "seed": args.seed,
        "geometry_hashes": geometry_hashes,
    }


def _cache(args, cfg: RunConfig):
    return BasisCache(args.cache_dir, cfg.grid, cfg.map_spec, cfg.tolerance)


def _bases_by_d(args, cfg: RunConfig, x_offset=None):
    cache = _cache(args, cfg)
    bases, hashes = {}, {}
    for d in cfg.scan.d_values:
        spec = cfg.geometry(d=d, x_offset=x_offset)
        maps, _ = cache.get(spec)
        bases[d] = maps
        hashes[f"{d / UM:.3f}"] = spec.hash()
    return bases, hashes


def _scan_model(cfg: RunConfig, bases, patch=None):
    return ScanModel(bases, cfg.trap, cfg.scan.endcaps, cfg.scan.moving, cfg.scan.charges, patch,
                     cfg.analysis.y_window, cfg.analysis.fit_radius, cfg.analysis.select)


# ---------------------------------------------------------------------------
# commands


def cmd_solve_basis(args, cfg):
    cache = _cache(args, cfg)
    out = Path(args.out)
    records = []
    for d in cfg.scan.d_values:
        spec = cfg.geometry(d=d)
        before = cache.solves
        _, reports = cache.get(spec)
        records.append({
            "d_um": round(d / UM, 6),
            "geometry_hash": spec.hash(),
            "solved": cache.solves - before,
            "files": sorted(str(cache.path(spec, t).name) for t in tags_for(spec)),
            "iterations": {t: r.iterations for t, r in sorted(reports.items())},
            "residuals": {t: r.residual for t, r in sorted(reports.items())},
        })
    _dump({"manifest": _manifest(args, cfg, [r["geometry_hash"] for r in records]), "placements": records},
          out / "solve_report.json")
    print(f"{sum(r['solved'] for r in records)} basis solves, {len(records)} placements")
    return EXIT_OK


def _load_patch(path):
    return PatchPotential.from_csv(path) if path else None


def cmd_analyze(args, cfg):
    bases, hashes = _bases_by_d(args, cfg)
    patch = _load_patch(args.patch)
    rows = []
    ref_curv = {}
    for d, maps in sorted(bases.items(), reverse=True):
        neutral = compose_total(maps, cfg.scan.endcaps, replace(cfg.scan.charges, **{
            f"{cfg.scan.moving}_f": 0.0, f"{cfg.scan.moving}_s": 0.0}), cfg.trap, patch)
        try:
            ref_curv[d] = analyze(neutral, cfg.trap.ion_mass, cfg.analysis.fit_radius, cfg.analysis.y_window,
                                  select=cfg.analysis.select).wells.axial_curvature
        except LandscapeError:
            ref_curv[d] = None
        emap = compose_total(maps, cfg.scan.endcaps, cfg.scan.charges, cfg.trap, patch)
        try:
            obs = analyze(emap, cfg.trap.ion_mass, cfg.analysis.fit_radius, cfg.analysis.y_window, ref_curv[d],
                          cfg.analysis.select, cfg.analysis.percentile)
        except LandscapeError as exc:
            log.warning("d = %.1f um: %s", d / UM, exc)
            obs = None
        kind = obs.kind if obs is not None else "transition"
        ok = obs is not None and kind != "transition"
        rows.append({
            "d_um": round(d / UM, 6),
            "kind": kind,
            "x_ion_um": round(obs.x / UM, 6) if ok else None,
            "f_ax_kHz": round(obs.omega_axial / TWO_PI_KHZ, 6) if ok else None,
            "f_rad_kHz": round(obs.omega_radial / TWO_PI_KHZ, 6) if ok else None,
            "fit_rms_J": float(f"{obs.fit.rms:.6e}") if ok else None,
            "geometry_hash": hashes[f"{d / UM:.3f}"],
        })
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["d_um", "kind", "x_ion_um", "f_ax_kHz", "f_rad_kHz", "fit_rms_J", "geometry_hash"]
    with open(out / "observables.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join("" if r[c] is None else str(r[c]) for c in cols) + "\n")
    _dump({"manifest": _manifest(args, cfg, sorted(set(hashes.values()))), "observables": rows},
          out / "observables.json")
    for r in rows:
        print(f"d={r['d_um']:8.1f} um  {r['kind']:10s}  x={r['x_ion_um']}  f_ax={r['f_ax_kHz']}")
    return EXIT_OK


def _simulated_law(args, cfg):
    cache = _cache(args, cfg)
    spec = cfg.geometry()
    maps, _ = cache.get(spec)
    omegas = []
    for v in cfg.axial_law.voltages:
        emap = compose_total(maps, EndcapVoltages(v, v), cfg.scan.charges, cfg.trap)
        obs = analyze(emap, cfg.trap.ion_mass, cfg.analysis.fit_radius, cfg.analysis.y_window,
                      select=cfg.analysis.select)
        omegas.append(obs.omega_axial)
    return cfg.axial_law.voltages, omegas, spec.hash()


def _law_dict(law):
    return {"alpha_kHz2_per_mV": round(law.alpha_khz2_per_mv, 10), "omega0_over_2pi_kHz": round(
        law.omega0_over_2pi_khz, 8) if np.isfinite(law.omega0) else None,
            "omega0_sq_rad2_s2": float(f"{law.omega0_sq:.10e}"), "rms_rad2_s2": float(f"{law.rms:.6e}")}


def cmd_fit_axial_law(args, cfg):
    if args.input:
        rows = _read_table(args.input, ("V_ecM_V", "f_kHz"))
        v = [r["V_ecM_V"] for r in rows]
        w = [r["f_kHz"] * TWO_PI_KHZ for r in rows]
        hashes = []
    else:
        v, w, h = _simulated_law(args, cfg)
        hashes = [h]
    law = fit_axial_law(v, w)
    out = {"manifest": _manifest(args, cfg, hashes), "fit": _law_dict(law),
           "points": [{"V_ecM_V": float(a), "f_kHz": round(b / TWO_PI_KHZ, 8)} for a, b in zip(v, w)]}
    _dump(out, Path(args.out) / "axial_law.json")
    print(f"alpha = {law.alpha_khz2_per_mv:.4f} kHz^2/mV, omega0/2pi = {law.omega0_over_2pi_khz:.2f} kHz")
    return EXIT_OK


def cmd_calibrate(args, cfg):
    alpha_exp = args.alpha_exp if args.alpha_exp is not None else cfg.axial_law.alpha_exp_khz2_per_mv
    if args.alpha_sim is not None:
        alpha_sim, hashes = args.alpha_sim, []
    else:
        v, w, h = _simulated_law(args, cfg)
        alpha_sim, hashes = fit_axial_law(v, w).alpha_khz2_per_mv, [h]
    scale = calibrate_endcaps(alpha_exp, alpha_sim)
    out = {"manifest": _manifest(args, cfg, hashes), "alpha_exp_kHz2_per_mV": alpha_exp,
           "alpha_sim_kHz2_per_mV": round(alpha_sim, 10), "endcap_voltage_scale": round(scale, 10)}
    _dump(out, Path(args.out) / "calibration.json")
    print(f"endcap_voltage_scale = {scale:.6f}")
    return EXIT_OK


def cmd_reconstruct_patch(args, cfg):
    scan = AxialScan.from_csv(args.scan, mass=cfg.trap.ion_mass, charge=cfg.trap.ion_charge)
    a = reconstruct_from_positions(scan, anchor=args.anchor_um * UM if args.anchor_um is not None else None)
    x0 = args.zero_endcap_x_um * UM if args.zero_endcap_x_um is not None else a.x_anchor
    b = reconstruct_from_frequencies(scan, x0, args.zero_endcap_slope, anchor=a.x_anchor)
    m = mean_patch(a, b)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    m.to_csv(out / "patch.csv")
    a.to_csv(out / "patch_positions.csv")
    b.to_csv(out / "patch_frequencies.csv")
    xs = m.x
    report = {
        "manifest": _manifest(args, cfg, []),
        "anchor_um": round(m.x_anchor / UM, 6),
        "mean_position_discrepancy_um": round(float(np.mean(np.abs(scan.dx))) / UM, 6),
        "mean_frequency_discrepancy_kHz": round(float(np.mean(np.abs(scan.omega_exp - scan.omega_sim)))
                                                / TWO_PI_KHZ, 6),
        "reference_frequency_discrepancy_kHz": 4.8,
        "cross_method_rms_V": float(f"{np.sqrt(np.mean((a(xs) - b(xs)) ** 2)):.6e}"),
    }
    _dump(report, out / "patch_report.json")
    print(f"patch with {len(m.x)} samples, anchor at {m.x_anchor / UM:.1f} um")
    return EXIT_OK


def _infer(args, cfg, dataset, bases_for_offset):
    inf = cfg.inference
    offsets = list(inf.x_offsets) or [cfg.fiber(cfg.scan.moving)[1].x_offset]
    patch = _load_patch(getattr(args, "patch", None))
    models = {}

    def model_for(off):
        if off not in models:
            bases, _ = bases_for_offset(off)
            models[off] = _scan_model(cfg, bases, patch)
        return models[off]

    first = model_for(offsets[0])
    surface = grid_scan(dataset, first, inf.budget, inf.sigma_f_range, inf.sigma_s_range, inf.step, args.jobs)
    start = surface.minimum
    if len(offsets) > 1:
        best, results = position_offset_sweep(dataset, offsets, model_for, start, inf.budget, inf.constrained)
        result = results[best]
    else:
        result = refine(dataset, first, start, inf.constrained, inf.budget)
        result.x_offset = offsets[0]
    result.surface = surface
    return result


def cmd_infer_charges(args, cfg):
    dataset = FiberScanDataset.from_csv(args.dataset, moving=cfg.scan.moving)
    if not dataset.usable.any():
        raise InferenceError(f"{args.dataset}: no usable points (all flagged transition or missing)")
    cfg = replace(cfg, scan=replace(cfg.scan, d_values=tuple(dataset.d)))
    hashes = {}

    def bases_for(off):
        b, h = _bases_by_d(args, cfg, x_offset=off)
        hashes.update(h)
        return b, h

    result = _infer(args, cfg, dataset, bases_for)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.surface.to_csv(out / "residual_surface.csv")
    _dump({"manifest": _manifest(args, cfg, sorted(set(hashes.values()))), "result": result.to_dict()},
          out / "result.json")
    print(f"sigma_f = {result.sigma_f:+.3f}, sigma_s = {result.sigma_s:+.3f} e/um^2, "
          f"mean residual {result.mean_residual:.3f}")
    return EXIT_OK


def _synth(args, cfg):
    bases, hashes = _bases_by_d(args, cfg)
    model = _scan_model(cfg, bases, _load_patch(getattr(args, "patch", None)))
    noise = replace(cfg.synth.noise, seed=args.seed if args.seed is not None else cfg.synth.noise.seed)
    positioner = POSITIONER_P if cfg.scan.moving == "P" else POSITIONER_M
    data = generate_dataset(model, cfg.synth.sigma_f, cfg.synth.sigma_s, noise, cfg.synth.camera, positioner)
    truth = {"sigma_f_e_per_um2": cfg.synth.sigma_f, "sigma_s_e_per_um2": cfg.synth.sigma_s, "seed": noise.seed,
             "noise_position_um": noise.position_sigma / UM, "noise_frequency_kHz": noise.frequency_sigma / TWO_PI_KHZ}
    return data, truth, hashes


def cmd_synth(args, cfg):
    data, truth, hashes = _synth(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data.to_csv(out / "dataset.csv")
    _dump({"manifest": _manifest(args, cfg, sorted(set(hashes.values()))), "truth": truth}, out / "truth.json")
    print(f"wrote {len(data)} points ({sum(k == 'transition' for k in data.kind)} transition)")
    return EXIT_OK


def cmd_roundtrip(args, cfg):
    data, truth, hashes = _synth(args, cfg)

    def bases_for(off):
        return _bases_by_d(args, cfg, x_offset=off)

    result = _infer(args, cfg, data, bases_for)
    rec = result.to_dict()
    err = {"sigma_f": round(result.sigma_f - truth["sigma_f_e_per_um2"], 10),
           "sigma_s": round(result.sigma_s - truth["sigma_s_e_per_um2"], 10)}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump({"manifest": _manifest(args, cfg, sorted(set(hashes.values()))), "truth": truth, "result": rec,
           "error": err}, out / "roundtrip.json")
    print(f"recovered ({result.sigma_f:+.3f}, {result.sigma_s:+.3f}) vs plant "
          f"({truth['sigma_f_e_per_um2']:+.3f}, {truth['sigma_s_e_per_um2']:+.3f})")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="fibercharge", description=__doc__)
    p.add_argument("--version", action="version", version=f"fibercharge {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML run configuration")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--seed", type=int, default=None, help="RNG seed (overrides the config)")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers for grid scans")
    common.add_argument("--cache-dir", type=Path, default=None, help="basis cache directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("solve-basis", parents=[common], help="solve and cache basis maps for every scan distance")
    a = sub.add_parser("analyze", parents=[common], help="positions and frequencies per fiber distance")
    a.add_argument("--patch", type=Path, default=None, help="patch CSV (x_um, U_patch_V, err_V)")
    f = sub.add_parser("fit-axial-law", parents=[common], help="fit omega^2 = alpha V + omega0^2")
    f.add_argument("--input", type=Path, default=None, help="CSV with V_ecM_V,f_kHz (default: simulate)")
    c = sub.add_parser("calibrate", parents=[common], help="endcap voltage scale alpha_exp / alpha_sim")
    c.add_argument("--alpha-exp", type=float, default=None, help="kHz^2/mV")
    c.add_argument("--alpha-sim", type=float, default=None, help="kHz^2/mV (default: simulate)")
    r = sub.add_parser("reconstruct-patch", parents=[common], help="patch potential from an axial scan CSV")
    r.add_argument("--scan", type=Path, required=True)
    r.add_argument("--anchor-um", type=float, default=None)
    r.add_argument("--zero-endcap-x-um", type=float, default=None,
                   help="observed equilibrium without endcap voltages (default: anchor)")
    r.add_argument("--zero-endcap-slope", type=float, default=0.0,
                   help="simulated axial slope without endcaps at that point (V/m)")
    i = sub.add_parser("infer-charges", parents=[common], help="fit fiber surface charge densities")
    i.add_argument("--dataset", type=Path, required=True)
    i.add_argument("--patch", type=Path, default=None)
    s = sub.add_parser("synth", parents=[common], help="synthetic retraction-scan dataset")
    s.add_argument("--patch", type=Path, default=None)
    rt = sub.add_parser("roundtrip", parents=[common], help="synth followed by infer-charges")
    rt.add_argument("--patch", type=Path, default=None)
    return p


COMMANDS = {
    "solve-basis": cmd_solve_basis,
    "analyze": cmd_analyze,
    "fit-axial-law": cmd_fit_axial_law,
    "calibrate": cmd_calibrate,
    "reconstruct-patch": cmd_reconstruct_patch,
    "infer-charges": cmd_infer_charges,
    "synth": cmd_synth,
    "roundtrip": cmd_roundtrip,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (SchemaError, PatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConvergenceError, InferenceError) as exc:
        print(f"inference failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except StaleBasisError as exc:
        print(f"stale basis: {exc}", file=sys.stderr)
        return EXIT_STALE
    except GeometryError as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY


if __name__ == "__main__":
    sys.exit(main())
