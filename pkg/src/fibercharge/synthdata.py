"""Synthetic measurements: positioner and camera models, noise, and forward scans."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .constants import CA40_MASS, ELEMENTARY_CHARGE, KHZ, MM, UM
from .inference import FiberScanDataset, ScanModel
from .patch import AxialScan, PatchPotential

TWO_PI_KHZ = 2 * np.pi * KHZ


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PositionerModel:
    """Open-loop nanopositioner with direction-dependent step sizes (m/step).

    ``step_out`` increases the fiber distance d, ``step_in`` decreases it.
    """

    step_out: float
    step_in: float
    step_sigma: float = 0.1 * UM
    d_sigma: float = 13 * UM
    d_sigma_far: float = 13 * UM
    far_threshold: float = float("inf")

    def __post_init__(self):
        if not (self.step_out > 0 and self.step_in > 0):
            raise ValueError("step sizes must be positive")
        if self.step_sigma < 0 or self.d_sigma < 0 or self.d_sigma_far < 0:
            raise ValueError("uncertainties must be non-negative")

    def d_uncertainty(self, d):
        """Uncertainty of an accumulated fiber distance."""
        d = np.asarray(d, dtype=float)
        return np.where(d > self.far_threshold, self.d_sigma_far, self.d_sigma)

    def steps_for(self, distance, direction="in"):
        """Calibrated number of steps that covers ``distance`` (m)."""
        step = self.step_in if direction == "in" else self.step_out
        return int(round(distance / step))


POSITIONER_M = PositionerModel(1.7 * UM, 2.2 * UM)
POSITIONER_P = PositionerModel(2.0 * UM, 1.8 * UM, d_sigma_far=30 * UM, far_threshold=0.75 * MM)


@dataclass(frozen=True)
class CameraModel:
    pixel_pitch: float = 0.83 * UM
    pixel_pitch_err: float = 0.04 * UM
    centroid_precision_px: float = 1.0
    field_of_view: float = 0.8 * MM
    quantize: bool = True

    def __post_init__(self):
        if not self.pixel_pitch > 0:
            raise ValueError("pixel pitch must be positive")

    def in_view(self, x):
        return np.abs(np.asarray(x)) <= 0.5 * self.field_of_view

    def image(self, x):
        """Position snapped to the pixel grid (pixel centers at integer multiples of the pitch)."""
        x = np.asarray(x, dtype=float)
        if not self.quantize:
            return x
        return np.round(x / self.pixel_pitch) * self.pixel_pitch


@dataclass(frozen=True)
class NoiseModel:
    position_sigma: float = 0.8 * UM
    frequency_sigma: float = 2.0 * TWO_PI_KHZ
    seed: int = 0

    def __post_init__(self):
        if self.position_sigma < 0 or self.frequency_sigma < 0:
            raise ValueError("noise levels must be non-negative")

    def rng(self):
        return np.random.default_rng(self.seed)

    @classmethod
    def noiseless(cls, seed=0):
        return cls(0.0, 0.0, seed)


def simulate_retraction_sequence(model: PositionerModel, steps, start=0.0, jitter=False, rng=None):
    """Fiber distance after each signed move (positive = retract, increasing d).

    Returns an array of length ``len(steps) + 1`` starting at ``start``. With
    ``jitter`` every single step is drawn around its calibrated size.
    """
    steps = [int(s) for s in steps]
    if jitter and rng is None:
        rng = np.random.default_rng(0)
    pos = [float(start)]
    for n in steps:
        size = model.step_out if n > 0 else model.step_in
        count = abs(n)
        if jitter and count:
            moved = size * count + model.step_sigma * np.sqrt(count) * rng.standard_normal()
        else:
            moved = size * count
        pos.append(pos[-1] + np.sign(n) * moved)
    return np.array(pos)


@dataclass(frozen=True)
class PolynomialPatch:
    """Exact polynomial patch potential (V), x in m, highest power first.

    Synthetic scans need exact curvatures; a sampled PCHIP patch is only
    continuous in its first derivative.
    """

    coefficients: tuple
    x_shift: float = 0.0

    def __call__(self, x):
        return np.polyval(self.coefficients, np.asarray(x, dtype=float) - self.x_shift)

    def sampled(self, x_range=(-400 * UM, 400 * UM), n=161):
        x = np.linspace(x_range[0], x_range[1], n)
        return PatchPotential(x, self(x), np.zeros(n), 0.0, "plant")


def plant_patch(coefficients=None, samples=None, x_range=(-400 * UM, 400 * UM), n=161):
    """Patch potential from polynomial coefficients (V, x in m, highest power first) or samples.

    ``samples`` is ``(x, U)`` and gives a sampled :class:`PatchPotential`;
    otherwise the polynomial is sampled on ``n`` points over ``x_range``.
    """
    if samples is not None:
        x, u = (np.asarray(a, dtype=float) for a in samples)
        if not np.all(np.isfinite(u)):
            raise ValueError("patch samples are not finite")
        return PatchPotential(x, u, np.zeros_like(u), 0.0, "plant")
    return PolynomialPatch(tuple(coefficients) if coefficients is not None else (0.0,)).sampled(x_range, n)


def cubic_patch(range_volts=2e-3, half_width=400 * UM, x_shift=0.0, quadratic=0.0):
    """Cubic with peak-to-peak ``range_volts`` over +/- ``half_width`` about ``x_shift``."""
    a = range_volts / (2 * half_width**3)
    return PolynomialPatch((a, quadratic, 0.0, 0.0), x_shift)


# ---------------------------------------------------------------------------
# one-dimensional axial model for patch round trips


@dataclass(frozen=True)
class AxialTrapModel:
    """Harmonic axial trap with a linear tilt from the endcap difference.

    Phi_sim(x) / Q = 1/2 k_v (x - x0)^2 + g V_D x, with k_v the curvature per
    charge in V/m^2 and g the tilt per volt of difference (1/m).
    """

    omega: float = 2 * np.pi * 150 * KHZ
    tilt_per_volt: float = 0.0
    x0: float = 0.0
    mass: float = CA40_MASS
    charge: float = ELEMENTARY_CHARGE

    @property
    def k_v(self):
        return self.mass * self.omega**2 / self.charge

    def sim_position(self, v_diff):
        return self.x0 - self.tilt_per_volt * np.asarray(v_diff, dtype=float) / self.k_v

    def v_for_position(self, x):
        return (self.x0 - np.asarray(x, dtype=float)) * self.k_v / self.tilt_per_volt

    def potential(self, x, v_diff, patch=None):
        x = np.asarray(x, dtype=float)
        u = 0.5 * self.k_v * (x - self.x0) ** 2 + self.tilt_per_volt * v_diff * x
        if patch is not None:
            u = u + patch(x)
        return u

    def equilibrium(self, v_diff, patch=None, window=150 * UM):
        """Minimum of the total potential near the simulated minimum, with its frequency."""
        xs = float(self.sim_position(v_diff))
        if patch is None:
            return xs, self.omega
        # patch force: find the zero of the total slope bracketed around xs
        h = 1e-7

        def slope(x):
            return (self.potential(x + h, v_diff, patch) - self.potential(x - h, v_diff, patch)) / (2 * h)

        lo, hi = xs - window, xs + window
        if slope(lo) < 0 < slope(hi):
            x = brentq(slope, lo, hi, xtol=1e-13, rtol=1e-14)
        else:
            res = minimize_scalar(lambda t: self.potential(t, v_diff, patch), bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-12})
            x = res.x
        hh = 2e-6
        curv = (self.potential(x + hh, v_diff, patch) - 2 * self.potential(x, v_diff, patch)
                + self.potential(x - hh, v_diff, patch)) / hh**2
        if not curv > 0:
            raise GenerationError("trap is not confining at this voltage")
        return float(x), float(np.sqrt(curv * self.charge / self.mass))


def synthetic_axial_scan(trap: AxialTrapModel, patch, v_diff, noise: NoiseModel | None = None,
                         camera: CameraModel | None = None, x_err=0.8 * UM, f_err=2 * TWO_PI_KHZ):
    """Endcap-difference scan of the axial model with a planted patch."""
    v_diff = np.asarray(v_diff, dtype=float)
    rng = noise.rng() if noise is not None else None
    x_exp, w_exp = [], []
    for v in v_diff:
        x, w = trap.equilibrium(v, patch)
        x_exp.append(x)
        w_exp.append(w)
    x_exp, w_exp = np.array(x_exp), np.array(w_exp)
    if camera is not None:
        x_exp = camera.image(x_exp)
    if noise is not None:
        x_exp = x_exp + noise.position_sigma * rng.standard_normal(len(v_diff))
        w_exp = w_exp + noise.frequency_sigma * rng.standard_normal(len(v_diff))
    n = len(v_diff)
    return AxialScan(
        v_diff, x_exp, np.full(n, x_err), w_exp, np.full(n, f_err),
        trap.sim_position(v_diff), np.full(n, trap.omega), trap.mass, trap.charge,
    )


def zero_endcap_equilibrium(patch, x0=0.0, window=300 * UM, rf_curvature=0.0):
    """Equilibrium without endcap voltages: minimum of the rf axial term plus the patch."""
    res = minimize_scalar(lambda t: 0.5 * rf_curvature * (t - x0) ** 2 + float(patch(t)),
                          bounds=(x0 - window, x0 + window), method="bounded", options={"xatol": 1e-12})
    return float(res.x)


# ---------------------------------------------------------------------------
# fiber-scan datasets


def generate_dataset(model: ScanModel, sigma_f, sigma_s, noise: NoiseModel | None = None,
                     camera: CameraModel | None = None, positioner: PositionerModel | None = None,
                     d_values=None, x_err=0.8 * UM, f_err=2 * TWO_PI_KHZ):
    """Observables of ``model`` at the planted densities, quantized and jittered.

    Transition configurations are kept as flagged points without
    observables, mirroring the omitted region of a measured scan.
    """
    noise = noise or NoiseModel.noiseless()
    camera = camera or CameraModel(quantize=False)
    d_values = model.d_values if d_values is None else np.asarray(d_values, dtype=float)
    rng = noise.rng()
    preds = model.predict(sigma_f, sigma_s, d_values)
    n = len(preds)
    x = np.array([p.x for p in preds])
    w = np.array([p.omega for p in preds])
    kind = [p.kind for p in preds]
    ok = np.array([k != "transition" for k in kind])
    x[ok] = camera.image(x[ok])
    dx = noise.position_sigma * rng.standard_normal(n)
    dw = noise.frequency_sigma * rng.standard_normal(n)
    x = np.where(ok, x + dx, np.nan)
    w = np.where(ok, w + dw, np.nan)
    d_err = positioner.d_uncertainty(d_values) if positioner is not None else np.full(n, 13 * UM)
    return FiberScanDataset(d_values, d_err, x, np.full(n, x_err), w, np.full(n, f_err), model.moving, kind)
