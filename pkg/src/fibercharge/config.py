"""YAML run configuration.

Lengths are given in um, voltages in V, frequencies in Hz (or kHz where the
key says so) and densities in e/um^2. Everything is converted to SI here.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import yaml

from .composer import EndcapVoltages
from .constants import ELEMENTARY_CHARGE, KHZ, UM
from .field_solver import GridSpec, MapSpec
from .geometry import (
    FIBER_M,
    FIBER_P,
    ChargeState,
    Domain,
    ElectrodeLayout,
    FiberPlacement,
    TrapConfig,
    build_geometry,
)
from .inference import ErrorBudget
from .patch import PositionErrorProfile, SchemaError
from .synthdata import CameraModel, NoiseModel

TWO_PI_KHZ = 2 * np.pi * KHZ


class ConfigError(SchemaError):
    pass


@dataclass(frozen=True)
class AnalysisConfig:
    fit_radius: float = 50 * UM
    y_window: float = 150 * UM
    select: str = "left"
    percentile: float = 1.0


@dataclass(frozen=True)
class ScanConfig:
    moving: str = "P"
    d_values: tuple = tuple(v * UM for v in (1600, 1200, 1000, 900, 800, 750, 700, 650, 600, 550, 500, 450, 400))
    endcap_mean: float = 1500.0
    endcap_difference: float = 0.0
    charges: ChargeState = ChargeState()

    @property
    def endcaps(self):
        return EndcapVoltages.from_mean_difference(self.endcap_mean, self.endcap_difference)


@dataclass(frozen=True)
class AxialLawConfig:
    voltages: tuple = (800.0, 1000.0, 1300.0, 1500.0, 1800.0)
    alpha_exp_khz2_per_mv: float = 2.3


@dataclass(frozen=True)
class InferenceConfig:
    sigma_f_range: tuple = (-15.0, 60.0)
    sigma_s_range: tuple = (-15.0, 60.0)
    step: float = 1.0
    constrained: bool = False
    x_offsets: tuple = ()  # empty: the configured placement of the moving fiber
    budget: ErrorBudget = ErrorBudget(recon_position=PositionErrorProfile(0.0))


@dataclass(frozen=True)
class SynthConfig:
    sigma_f: float = 4.0
    sigma_s: float = 8.5
    noise: NoiseModel = NoiseModel()
    camera: CameraModel = CameraModel()


@dataclass(frozen=True)
class RunConfig:
    trap: TrapConfig = TrapConfig()
    layout: ElectrodeLayout = ElectrodeLayout()
    domain: Domain = Domain()
    fibers: tuple = ((FIBER_M, FiberPlacement(2000 * UM, side="above")),
                     (FIBER_P, FiberPlacement(1600 * UM, x_offset=10 * UM, side="below")))
    grid: GridSpec = GridSpec()
    map_spec: MapSpec = MapSpec()
    tolerance: float = 1e-8
    analysis: AnalysisConfig = AnalysisConfig()
    scan: ScanConfig = ScanConfig()
    axial_law: AxialLawConfig = AxialLawConfig()
    inference: InferenceConfig = InferenceConfig()
    synth: SynthConfig = SynthConfig()

    def fiber(self, label):
        for spec, placement in self.fibers:
            if spec.label == label:
                return spec, placement
        raise ConfigError(f"fiber {label!r} not configured")

    def fibers_at(self, d, x_offset=None, label=None):
        """Fiber list with the moving fiber (default: the scan's) moved to distance ``d``."""
        label = label or self.scan.moving
        out = []
        for spec, placement in self.fibers:
            if spec.label == label:
                placement = replace(placement, d=d)
                if x_offset is not None:
                    placement = replace(placement, x_offset=x_offset)
            out.append((spec, placement))
        return out

    def geometry(self, d=None, x_offset=None):
        fibers = self.fibers if d is None and x_offset is None else self.fibers_at(
            d if d is not None else self.fiber(self.scan.moving)[1].d, x_offset)
        return build_geometry(self.trap, fibers, layout=self.layout, domain=self.domain)


def _section(raw, key):
    val = raw.get(key)
    if val is None:
        return {}
    if not isinstance(val, dict):
        raise ConfigError(f"section {key!r} must be a mapping")
    return val


def _take(sec, name, key, scale=1.0, cast=float):
    if key not in sec:
        return {}
    try:
        return {name: cast(sec[key]) * scale if cast is float else cast(sec[key])}
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from exc


def _check_keys(sec, allowed, where):
    extra = set(sec) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


def parse_config(raw: dict) -> RunConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    _check_keys(raw, ("trap", "layout", "domain", "fibers", "grid", "map", "solver", "analysis", "scan",
                      "axial_law", "inference", "synth"), "top level")
    cfg = RunConfig()

    t = _section(raw, "trap")
    _check_keys(t, ("ion_electrode_distance_um", "endcap_separation_um", "blade_scale", "rf_amplitude_V",
                    "rf_frequency_Hz", "rf_frequency_is_angular", "endcap_left_V", "endcap_right_V",
                    "ion_charge_e", "ion_mass_kg", "endcap_voltage_scale"), "trap")
    kw = {}
    kw.update(_take(t, "ion_electrode_distance", "ion_electrode_distance_um", UM))
    kw.update(_take(t, "endcap_separation", "endcap_separation_um", UM))
    kw.update(_take(t, "blade_scale", "blade_scale"))
    kw.update(_take(t, "rf_amplitude", "rf_amplitude_V"))
    if "rf_frequency_Hz" in t:
        f = float(t["rf_frequency_Hz"])
        kw["rf_angular_frequency"] = f if t.get("rf_frequency_is_angular", False) else 2 * np.pi * f
    kw.update(_take(t, "endcap_left", "endcap_left_V"))
    kw.update(_take(t, "endcap_right", "endcap_right_V"))
    kw.update(_take(t, "ion_charge", "ion_charge_e", ELEMENTARY_CHARGE))
    kw.update(_take(t, "ion_mass", "ion_mass_kg"))
    kw.update(_take(t, "endcap_voltage_scale", "endcap_voltage_scale"))
    trap = replace(cfg.trap, **kw)

    lay = _section(raw, "layout")
    names = [f for f in ElectrodeLayout.__dataclass_fields__]
    _check_keys(lay, [n + "_um" for n in names], "layout")
    layout = replace(cfg.layout, **{n: float(lay[n + "_um"]) * UM for n in names if n + "_um" in lay})

    dom = _section(raw, "domain")
    _check_keys(dom, ("half_x_um", "half_y_um", "half_z_um"), "domain")
    domain = replace(cfg.domain, **{k[:-3]: float(v) * UM for k, v in dom.items()})

    fibers = []
    fib = _section(raw, "fibers")
    _check_keys(fib, ("M", "P"), "fibers")
    for spec, placement in cfg.fibers:
        f = fib.get(spec.label, {}) or {}
        _check_keys(f, ("cladding_diameter_um", "length_um", "relative_permittivity", "d_um", "x_offset_um",
                        "z_offset_um"), f"fibers.{spec.label}")
        skw = {}
        skw.update(_take(f, "cladding_diameter", "cladding_diameter_um", UM))
        skw.update(_take(f, "length", "length_um", UM))
        skw.update(_take(f, "relative_permittivity", "relative_permittivity"))
        pkw = {}
        pkw.update(_take(f, "d", "d_um", UM))
        pkw.update(_take(f, "x_offset", "x_offset_um", UM))
        pkw.update(_take(f, "z_offset", "z_offset_um", UM))
        fibers.append((replace(spec, **skw), replace(placement, **pkw)))

    g = _section(raw, "grid")
    _check_keys(g, ("core_half_um", "core_spacing_um", "growth", "max_spacing_um", "refinements", "mid_half_um",
                    "mid_spacing_um"), "grid")
    gkw = {}
    if "core_half_um" in g:
        gkw["core_half"] = tuple(float(v) * UM for v in g["core_half_um"])
    if "mid_half_um" in g:
        gkw["mid_half"] = tuple(float(v) * UM for v in g["mid_half_um"])
    gkw.update(_take(g, "core_spacing", "core_spacing_um", UM))
    gkw.update(_take(g, "growth", "growth"))
    gkw.update(_take(g, "max_spacing", "max_spacing_um", UM))
    gkw.update(_take(g, "mid_spacing", "mid_spacing_um", UM))
    gkw.update(_take(g, "refinements", "refinements", cast=int))
    grid = replace(cfg.grid, **gkw)

    m = _section(raw, "map")
    _check_keys(m, ("x_half_um", "y_half_um", "spacing_um"), "map")
    map_spec = replace(cfg.map_spec, **{k[:-3]: float(v) * UM for k, v in m.items()})

    s = _section(raw, "solver")
    _check_keys(s, ("tolerance",), "solver")
    tol = float(s.get("tolerance", cfg.tolerance))

    a = _section(raw, "analysis")
    _check_keys(a, ("fit_radius_um", "y_window_um", "select", "percentile"), "analysis")
    akw = {}
    akw.update(_take(a, "fit_radius", "fit_radius_um", UM))
    akw.update(_take(a, "y_window", "y_window_um", UM))
    akw.update(_take(a, "select", "select", cast=str))
    akw.update(_take(a, "percentile", "percentile"))
    analysis = replace(cfg.analysis, **akw)

    sc = _section(raw, "scan")
    _check_keys(sc, ("moving", "d_um", "endcap_mean_V", "endcap_difference_V", "charges"), "scan")
    skw = {}
    skw.update(_take(sc, "moving", "moving", cast=str))
    if "d_um" in sc:
        skw["d_values"] = tuple(float(v) * UM for v in sc["d_um"])
    skw.update(_take(sc, "endcap_mean", "endcap_mean_V"))
    skw.update(_take(sc, "endcap_difference", "endcap_difference_V"))
    if "charges" in sc:
        ch = sc["charges"] or {}
        _check_keys(ch, ("M_f", "M_s", "P_f", "P_s"), "scan.charges")
        skw["charges"] = ChargeState(**{k: float(v) for k, v in ch.items()})
    scan = replace(cfg.scan, **skw)

    al = _section(raw, "axial_law")
    _check_keys(al, ("voltages_V", "alpha_exp_kHz2_per_mV"), "axial_law")
    alkw = {}
    if "voltages_V" in al:
        alkw["voltages"] = tuple(float(v) for v in al["voltages_V"])
    alkw.update(_take(al, "alpha_exp_khz2_per_mv", "alpha_exp_kHz2_per_mV"))
    axial_law = replace(cfg.axial_law, **alkw)

    inf = _section(raw, "inference")
    _check_keys(inf, ("sigma_f_range", "sigma_s_range", "step", "constrained", "x_offsets_um", "errors"), "inference")
    ikw = {}
    for key in ("sigma_f_range", "sigma_s_range"):
        if key in inf:
            ikw[key] = tuple(float(v) for v in inf[key])
    ikw.update(_take(inf, "step", "step"))
    ikw.update(_take(inf, "constrained", "constrained", cast=bool))
    if "x_offsets_um" in inf:
        ikw["x_offsets"] = tuple(float(v) * UM for v in inf["x_offsets_um"])
    e = inf.get("errors") or {}
    _check_keys(e, ("meas_position_um", "meas_frequency_kHz", "sim_position_um", "sim_frequency_kHz",
                    "recon_frequency_kHz", "recon_position"), "inference.errors")
    bkw = {}
    bkw.update(_take(e, "meas_position", "meas_position_um", UM))
    bkw.update(_take(e, "meas_frequency", "meas_frequency_kHz", TWO_PI_KHZ))
    bkw.update(_take(e, "sim_position", "sim_position_um", UM))
    bkw.update(_take(e, "sim_frequency", "sim_frequency_kHz", TWO_PI_KHZ))
    bkw.update(_take(e, "recon_frequency", "recon_frequency_kHz", TWO_PI_KHZ))
    if "recon_position" in e:
        rp = e["recon_position"]
        if rp is None:
            bkw["recon_position"] = None
        else:
            bkw["recon_position"] = PositionErrorProfile(
                float(rp.get("anchor_um", 0.0)) * UM,
                tuple(float(v) * UM for v in rp.get("distances_um", (0.0, 400.0))),
                tuple(float(v) * UM for v in rp.get("errors_um", (1.0, 15.0))),
            )
    ikw["budget"] = replace(cfg.inference.budget, **bkw)
    inference = replace(cfg.inference, **ikw)

    sy = _section(raw, "synth")
    _check_keys(sy, ("sigma_f", "sigma_s", "noise", "camera"), "synth")
    sykw = {}
    sykw.update(_take(sy, "sigma_f", "sigma_f"))
    sykw.update(_take(sy, "sigma_s", "sigma_s"))
    if "noise" in sy:
        n = sy["noise"] or {}
        _check_keys(n, ("position_um", "frequency_kHz", "seed"), "synth.noise")
        sykw["noise"] = NoiseModel(float(n.get("position_um", 0.8)) * UM,
                                   float(n.get("frequency_kHz", 2.0)) * TWO_PI_KHZ, int(n.get("seed", 0)))
    if "camera" in sy:
        c = sy["camera"] or {}
        _check_keys(c, ("pixel_pitch_um", "field_of_view_um", "quantize"), "synth.camera")
        sykw["camera"] = CameraModel(pixel_pitch=float(c.get("pixel_pitch_um", 0.83)) * UM,
                                     field_of_view=float(c.get("field_of_view_um", 800)) * UM,
                                     quantize=bool(c.get("quantize", True)))
    synth = replace(cfg.synth, **sykw)

    return RunConfig(trap, layout, domain, tuple(fibers), grid, map_spec, tol, analysis, scan, axial_law,
                     inference, synth)


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(raw)


__all__ = ["AnalysisConfig", "ConfigError", "RunConfig", "load_config", "parse_config"]
