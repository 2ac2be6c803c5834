"""One-dimensional stray (patch) potential along the trap axis.

The patch is reconstructed from discrepancies between measured and simulated
ion positions and axial frequencies recorded while the endcap voltage
difference sweeps the ion along x. Potentials are stored in volts; the
composer multiplies by the ion charge.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.signal import savgol_filter

from .constants import CA40_MASS, ELEMENTARY_CHARGE, KHZ, UM


class PatchError(ValueError):
    pass


class ChangeOfVariablesError(PatchError):
    """Measured positions are not monotonic in the endcap voltage difference."""


@dataclass
class AxialScan:
    """Endcap-difference scan at fixed mean endcap voltage (SI units)."""

    v_diff: np.ndarray
    x_exp: np.ndarray
    x_err: np.ndarray
    omega_exp: np.ndarray
    omega_err: np.ndarray
    x_sim: np.ndarray
    omega_sim: np.ndarray
    mass: float = CA40_MASS
    charge: float = ELEMENTARY_CHARGE

    def __post_init__(self):
        names = ("v_diff", "x_exp", "x_err", "omega_exp", "omega_err", "x_sim", "omega_sim")
        arrays = [np.atleast_1d(np.asarray(getattr(self, n), dtype=float)) for n in names]
        n = len(arrays[0])
        if any(len(a) != n for a in arrays):
            raise PatchError("scan columns differ in length")
        if n < 2:
            raise PatchError("a scan needs at least two records")
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise PatchError("scan contains non-finite values")
        order = np.argsort(arrays[0], kind="stable")
        for name, a in zip(names, arrays):
            setattr(self, name, a[order])
        if np.any(self.x_err <= 0) or np.any(self.omega_err <= 0):
            raise PatchError("measurement errors must be positive")
        if len(np.unique(self.v_diff)) != n:
            raise PatchError("endcap voltage differences must be distinct")
        step = np.diff(self.x_exp)
        if not (np.all(step > 0) or np.all(step < 0)):
            raise ChangeOfVariablesError("x_exp must be strictly monotonic in V_ec,D")

    def __len__(self):
        return len(self.v_diff)

    @property
    def dx(self):
        return self.x_exp - self.x_sim

    def sorted_by_position(self):
        return np.argsort(self.x_exp)

    @classmethod
    def from_csv(cls, path, mass=CA40_MASS, charge=ELEMENTARY_CHARGE):
        """Read the scan CSV (V_ecD_V, x_exp_um, x_err_um, f_exp_kHz, f_err_kHz, x_sim_um, f_sim_kHz)."""
        cols = ("V_ecD_V", "x_exp_um", "x_err_um", "f_exp_kHz", "f_err_kHz", "x_sim_um", "f_sim_kHz")
        rows = _read_table(path, cols)
        a = {c: np.array([r[c] for r in rows]) for c in cols}
        w = 2 * np.pi * KHZ
        return cls(
            a["V_ecD_V"], a["x_exp_um"] * UM, a["x_err_um"] * UM,
            a["f_exp_kHz"] * w, a["f_err_kHz"] * w, a["x_sim_um"] * UM, a["f_sim_kHz"] * w,
            mass=mass, charge=charge,
        )

    def to_csv(self, path):
        w = 2 * np.pi * KHZ
        table = np.column_stack([
            self.v_diff, self.x_exp / UM, self.x_err / UM, self.omega_exp / w,
            self.omega_err / w, self.x_sim / UM, self.omega_sim / w,
        ])
        header = "V_ecD_V,x_exp_um,x_err_um,f_exp_kHz,f_err_kHz,x_sim_um,f_sim_kHz"
        np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.10g")


class SchemaError(ValueError):
    """CSV input does not follow the documented schema."""


def _read_table(path, columns):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in columns if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"{path}: line 1: missing columns {missing}")
        for line, rec in enumerate(reader, start=2):
            try:
                rows.append({c: float(rec[c]) for c in columns})
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"{path}: line {line}: {exc}") from exc
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


@dataclass
class PatchPotential:
    """Sampled U_patch(x) in volts, defined modulo a constant.

    Between samples a monotone cubic (PCHIP) interpolant is used; outside the
    sampled range the end values are held and :meth:`evaluate` flags the
    affected points.
    """

    x: np.ndarray
    values: np.ndarray
    uncertainty: np.ndarray
    x_anchor: float = 0.0
    provenance: str = "samples"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.uncertainty = np.asarray(self.uncertainty, dtype=float)
        if not (self.x.shape == self.values.shape == self.uncertainty.shape) or self.x.ndim != 1:
            raise PatchError("patch samples must be 1D arrays of equal length")
        if len(self.x) < 2 or np.any(np.diff(self.x) <= 0):
            raise PatchError("patch abscissae must be strictly increasing (at least two)")
        if not np.all(np.isfinite(self.values)):
            raise PatchError("patch values must be finite")

    @property
    def span(self):
        return float(self.x[0]), float(self.x[-1])

    def evaluate(self, x):
        """Return ``(U, outside)`` where ``outside`` marks constant extrapolation."""
        x = np.asarray(x, dtype=float)
        outside = (x < self.x[0]) | (x > self.x[-1])
        u = PchipInterpolator(self.x, self.values, extrapolate=False)(np.clip(x, self.x[0], self.x[-1]))
        return u, outside

    def __call__(self, x):
        return self.evaluate(x)[0]

    def shifted(self, constant):
        return replace(self, values=self.values + constant)

    def anchored(self):
        """Copy shifted so that U(x_anchor) = 0."""
        return self.shifted(-float(self(self.x_anchor)))

    def to_csv(self, path):
        table = np.column_stack([self.x / UM, self.values, self.uncertainty])
        np.savetxt(path, table, delimiter=",", header="x_um,U_patch_V,err_V", comments="", fmt="%.12g")

    @classmethod
    def from_csv(cls, path, x_anchor=0.0, provenance="file"):
        rows = _read_table(path, ("x_um", "U_patch_V", "err_V"))
        x = np.array([r["x_um"] for r in rows]) * UM
        return cls(x, [r["U_patch_V"] for r in rows], [r["err_V"] for r in rows], x_anchor, provenance)


def zero_patch(x_half=500 * UM):
    x = np.array([-x_half, x_half])
    return PatchPotential(x, np.zeros(2), np.zeros(2), 0.0, "zero")


# ---------------------------------------------------------------------------
# reconstruction


def find_anchor(scan: AxialScan, center=0.0):
    """Position where x_exp = x_sim; the sign change of dx nearest ``center``.

    Falls back to the sample with the smallest |dx| when dx never changes sign.
    """
    order = scan.sorted_by_position()
    x, dx = scan.x_exp[order], scan.dx[order]
    exact = np.nonzero(dx == 0)[0]
    crossings = [float(x[i]) for i in exact]
    s = np.sign(dx)
    for i in np.nonzero(s[:-1] * s[1:] < 0)[0]:
        t = dx[i] / (dx[i] - dx[i + 1])
        crossings.append(float(x[i] + t * (x[i + 1] - x[i])))
    if not crossings:
        return float(x[np.argmin(np.abs(dx))])
    return min(crossings, key=lambda c: abs(c - center))


def _with_anchor(x, columns, anchor):
    """Insert ``anchor`` into sorted ``x`` (linear interpolation of columns)."""
    if not x[0] <= anchor <= x[-1]:
        raise PatchError("anchor lies outside the scanned range")
    i = int(np.searchsorted(x, anchor))
    if i < len(x) and np.isclose(x[i], anchor, rtol=0, atol=1e-15):
        return x, columns, i
    xs = np.insert(x, i, anchor)
    cols = [np.insert(c, i, np.interp(anchor, x, c)) for c in columns]
    return xs, cols, i


def _cumtrapz_from(x, f, i0):
    """Trapezoidal integral of f from x[i0] to every sample, accumulated outward."""
    out = np.zeros_like(f)
    seg = 0.5 * (f[1:] + f[:-1]) * np.diff(x)
    out[i0 + 1:] = np.cumsum(seg[i0:])
    out[:i0] = -np.cumsum(seg[:i0][::-1])[::-1]
    return out


def _cumabs_from(x, g, i0):
    """Outward accumulation of |dx| * mean(g): an error bound that never decreases."""
    out = np.zeros_like(g)
    seg = 0.5 * (g[1:] + g[:-1]) * np.abs(np.diff(x))
    out[i0 + 1:] = np.cumsum(seg[i0:])
    out[:i0] = np.cumsum(seg[:i0][::-1])[::-1]
    return out


def _smooth(values, window):
    if not window:
        return values
    window = int(window) | 1
    if window > len(values):
        raise PatchError("smoothing window longer than the scan")
    return savgol_filter(values, window, 2)


def reconstruct_from_positions(scan: AxialScan, anchor=None, smooth=None):
    """Integrate U' = -(M/Q) omega_sim^2 (x_exp - x_sim) over x_exp."""
    order = scan.sorted_by_position()
    x = scan.x_exp[order]
    k = scan.mass / scan.charge
    slope = -k * scan.omega_sim[order] ** 2 * _smooth(scan.dx[order], smooth)
    # error of the integrand from the position uncertainty
    slope_err = k * scan.omega_sim[order] ** 2 * scan.x_err[order]
    x_anchor = find_anchor(scan) if anchor is None else float(anchor)
    xs, (f, g), i0 = _with_anchor(x, [slope, slope_err], x_anchor)
    u = _cumtrapz_from(xs, f, i0)
    err = _cumabs_from(xs, g, i0)
    return PatchPotential(xs, u, err, x_anchor, "positions")


def reconstruct_from_frequencies(scan: AxialScan, zero_endcap_equilibrium, zero_endcap_sim_slope=0.0,
                                 anchor=None, smooth=None):
    """Double integration of U'' = (M/Q)(omega_exp^2 - omega_sim^2).

    The first integration constant makes the total force vanish at the
    observed equilibrium without endcap voltages: U'(x0) = -zero_endcap_sim_slope,
    where the slope is dPhi_sim/dx / Q (V/m) of the simulation without
    endcaps at x0 (zero for a symmetric trap).
    """
    order = scan.sorted_by_position()
    x = scan.x_exp[order]
    k = scan.mass / scan.charge
    w_exp, w_sim = scan.omega_exp[order], scan.omega_sim[order]
    curv = k * _smooth(w_exp**2 - w_sim**2, smooth)
    curv_err = k * 2 * w_exp * scan.omega_err[order]
    x_anchor = find_anchor(scan) if anchor is None else float(anchor)
    xs, (f, g), i0 = _with_anchor(x, [curv, curv_err], x_anchor)
    x0 = float(zero_endcap_equilibrium)
    if not xs[0] <= x0 <= xs[-1]:
        raise PatchError("zero-endcap equilibrium lies outside the scanned range")
    d1 = _cumtrapz_from(xs, f, i0)
    c = -zero_endcap_sim_slope - np.interp(x0, xs, d1)
    d1 = d1 + c
    d1_err = _cumabs_from(xs, g, i0) + np.interp(x0, xs, _cumabs_from(xs, g, i0))
    u = _cumtrapz_from(xs, d1, i0)
    err = _cumabs_from(xs, d1_err, i0)
    return PatchPotential(xs, u, err, x_anchor, "frequencies", {"zero_endcap_equilibrium": x0})


def mean_patch(a: PatchPotential, b: PatchPotential):
    """Point-wise mean on the overlap of two reconstructions."""
    if not np.isclose(a.x_anchor, b.x_anchor, rtol=0, atol=1e-9):
        raise PatchError("patches are anchored at different positions")
    lo, hi = max(a.x[0], b.x[0]), min(a.x[-1], b.x[-1])
    if not hi > lo:
        raise PatchError("patch ranges do not overlap")
    x = np.union1d(a.x, b.x)
    x = x[(x >= lo) & (x <= hi)]
    if len(x) < 2:
        x = np.array([lo, hi])
    ua, ub = a(x), b(x)
    ea = np.interp(x, a.x, a.uncertainty)
    eb = np.interp(x, b.x, b.uncertainty)
    err = np.hypot(0.5 * np.abs(ua - ub), 0.5 * (ea + eb))
    err = _monotone_outward(x, err, a.x_anchor)
    return PatchPotential(x, 0.5 * (ua + ub), err, a.x_anchor, "mean")


def _monotone_outward(x, err, anchor):
    i0 = int(np.clip(np.searchsorted(x, anchor), 0, len(x) - 1))
    out = err.copy()
    out[i0:] = np.maximum.accumulate(err[i0:])
    out[:i0 + 1] = np.maximum.accumulate(err[:i0 + 1][::-1])[::-1]
    return out


@dataclass(frozen=True)
class PositionErrorProfile:
    """Piecewise-linear position error in |x - x_anchor|, held constant beyond the last breakpoint."""

    x_anchor: float
    distances: tuple = (0.0, 400 * UM)
    errors: tuple = (1 * UM, 15 * UM)

    def __post_init__(self):
        d, e = np.asarray(self.distances), np.asarray(self.errors)
        if d.shape != e.shape or len(d) < 1:
            raise ValueError("breakpoints and errors must match")
        if np.any(np.diff(d) <= 0) or np.any(np.diff(e) < 0) or np.any(e < 0):
            raise ValueError("breakpoints must increase and errors must not decrease")

    def __call__(self, x):
        r = np.abs(np.asarray(x, dtype=float) - self.x_anchor)
        return np.interp(r, self.distances, self.errors)


def position_dependent_error(patch: PatchPotential, distances=(0.0, 400 * UM), errors=(1 * UM, 15 * UM)):
    """Error profile for reconstructed positions, growing away from the anchor."""
    return PositionErrorProfile(patch.x_anchor, tuple(distances), tuple(errors))
