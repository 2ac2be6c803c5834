"""Surface charge densities from fiber-retraction scans by weighted least squares."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import minimize

from .composer import EndcapVoltages, EnergyMap, charge_energy, endcap_energy, patch_energy, pseudopotential
from .constants import KHZ, SIGMA0, UM
from .field_solver import RF, StaleBasisError, charge_tag
from .geometry import ChargeState, TrapConfig
from .landscape import LandscapeError, analyze
from .patch import PositionErrorProfile, SchemaError, _read_table

TWO_PI_KHZ = 2 * np.pi * KHZ


class InferenceError(RuntimeError):
    pass


class ConvergenceError(InferenceError):
    pass


@dataclass
class FiberScanDataset:
    """Measured ion positions and axial frequencies against the moving fiber's distance (SI)."""

    d: np.ndarray
    d_err: np.ndarray
    x: np.ndarray
    x_err: np.ndarray
    omega: np.ndarray
    omega_err: np.ndarray
    moving: str = "P"
    kind: list | None = None

    def __post_init__(self):
        names = ("d", "d_err", "x", "x_err", "omega", "omega_err")
        for n in names:
            setattr(self, n, np.atleast_1d(np.asarray(getattr(self, n), dtype=float)))
        n = len(self.d)
        if any(len(getattr(self, k)) != n for k in names):
            raise SchemaError("dataset columns differ in length")
        if n == 0:
            raise SchemaError("dataset is empty")
        if self.moving not in ("M", "P"):
            raise SchemaError(f"unknown fiber {self.moving!r}")
        if self.kind is None:
            self.kind = ["single"] * n
        if len(self.kind) != n:
            raise SchemaError("kind column has the wrong length")
        if np.any(self.x_err <= 0) or np.any(self.omega_err <= 0) or np.any(self.d_err < 0):
            raise SchemaError("errors must be positive")
        if len(np.unique(self.d)) != n:
            raise SchemaError("fiber distances must be distinct")

    def __len__(self):
        return len(self.d)

    @property
    def usable(self):
        """Points with a measured observable (not flagged as transition)."""
        return np.array([k != "transition" for k in self.kind]) & np.isfinite(self.x) & np.isfinite(self.omega)

    def to_csv(self, path):
        header = "d_um,d_err_um,x_um,x_err_um,f_kHz,f_err_kHz,kind"
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for i in range(len(self)):
                vals = (self.d[i] / UM, self.d_err[i] / UM, self.x[i] / UM, self.x_err[i] / UM,
                        self.omega[i] / TWO_PI_KHZ, self.omega_err[i] / TWO_PI_KHZ)
                fh.write(",".join(f"{v:.10g}" for v in vals) + f",{self.kind[i]}\n")

    @classmethod
    def from_csv(cls, path, moving="P"):
        cols = ("d_um", "d_err_um", "x_um", "x_err_um", "f_kHz", "f_err_kHz")
        rows = _read_table(path, cols)
        with open(path) as fh:
            head = fh.readline().strip().split(",")
        kinds = None
        if "kind" in head:
            with open(path, newline="") as fh:
                kinds = [r["kind"] or "single" for r in csv.DictReader(fh)]
        a = {c: np.array([r[c] for r in rows]) for c in cols}
        return cls(a["d_um"] * UM, a["d_err_um"] * UM, a["x_um"] * UM, a["x_err_um"] * UM,
                   a["f_kHz"] * TWO_PI_KHZ, a["f_err_kHz"] * TWO_PI_KHZ, moving, kinds)


@dataclass(frozen=True)
class ErrorBudget:
    """Error components (one standard deviation, SI) summed into the residual weights."""

    meas_position: float = 0.8 * UM
    meas_frequency: float = 2.0 * TWO_PI_KHZ
    sim_position: float = 0.5 * UM
    sim_frequency: float = 2.0 * TWO_PI_KHZ
    recon_frequency: float = 4.8 * TWO_PI_KHZ
    recon_position: PositionErrorProfile | None = None

    def __post_init__(self):
        if min(self.meas_position, self.meas_frequency, self.sim_position, self.sim_frequency,
               self.recon_frequency) < 0:
            raise ValueError("error components must be non-negative")

    def weights(self, dataset: FiberScanDataset):
        """Per-point (w_x, w_omega); the dataset's own errors are the measurement part."""
        recon_x = self.recon_position(dataset.x) if self.recon_position is not None else 0.0
        w_x = dataset.x_err + self.sim_position + recon_x
        w_w = dataset.omega_err + self.sim_frequency + self.recon_frequency
        return w_x, w_w


@dataclass
class Prediction:
    d: float
    kind: str
    x: float = float("nan")
    omega: float = float("nan")


@dataclass
class InferenceResult:
    sigma_f: float
    sigma_s: float
    constrained: bool
    mean_residual: float
    excluded: list = field(default_factory=list)
    n_evaluations: int = 0
    surface: "ResidualSurface | None" = None
    x_offset: float = 0.0

    def to_dict(self):
        out = {
            "sigma_f_e_per_um2": round(float(self.sigma_f), 10),
            "sigma_s_e_per_um2": round(float(self.sigma_s), 10),
            "constrained": self.constrained,
            "mean_residual": round(float(self.mean_residual), 10),
            "excluded_d_um": [round(float(d) / UM, 6) for d in self.excluded],
            "n_evaluations": int(self.n_evaluations),
            "x_offset_um": round(float(self.x_offset) / UM, 6),
        }
        if self.surface is not None:
            i, j = self.surface.argmin
            out["grid_minimum"] = [float(self.surface.sigma_f[i]), float(self.surface.sigma_s[j])]
        return out


@dataclass
class ResidualSurface:
    sigma_f: np.ndarray
    sigma_s: np.ndarray
    values: np.ndarray  # (len(sigma_f), len(sigma_s)); nan where no point survives exclusion

    @property
    def argmin(self):
        return np.unravel_index(np.nanargmin(self.values), self.values.shape)

    @property
    def minimum(self):
        i, j = self.argmin
        return float(self.sigma_f[i]), float(self.sigma_s[j])

    def to_csv(self, path):
        F, S = np.meshgrid(self.sigma_f, self.sigma_s, indexing="ij")
        table = np.column_stack([F.ravel(), S.ravel(), self.values.ravel()])
        np.savetxt(path, table, delimiter=",", header="sigma_f_e_per_um2,sigma_s_e_per_um2,mean_residual",
                   comments="", fmt="%.10g")

    def valley_slope(self, half_width=2):
        """Slope dsigma_s/dsigma_f of the valley (minor principal axis) around the minimum."""
        i, j = self.argmin
        i0, i1 = max(i - half_width, 0), min(i + half_width + 1, len(self.sigma_f))
        j0, j1 = max(j - half_width, 0), min(j + half_width + 1, len(self.sigma_s))
        F, S = np.meshgrid(self.sigma_f[i0:i1], self.sigma_s[j0:j1], indexing="ij")
        V = self.values[i0:i1, j0:j1]
        ok = np.isfinite(V)
        u, v = F[ok] - self.sigma_f[i], S[ok] - self.sigma_s[j]
        A = np.column_stack([np.ones_like(u), u, v, u * u, u * v, v * v])
        c, *_ = np.linalg.lstsq(A, V[ok], rcond=None)
        H = np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]])
        evals, evecs = np.linalg.eigh(H)
        soft = evecs[:, 0]
        return float(soft[1] / soft[0]) if soft[0] != 0 else float("inf")


class ScanModel:
    """Forward model of one retraction scan: bases for each fiber distance.

    ``bases`` maps each distance d (m) to the basis maps of the geometry with
    the moving fiber at d. The static part of the energy (pseudopotential,
    endcaps, patch and the fixed fiber's charges) is precomputed once per d;
    the moving fiber's densities enter linearly.
    """

    def __init__(self, bases: dict, trap: TrapConfig, endcaps: EndcapVoltages, moving="P",
                 fixed_charges: ChargeState | None = None, patch=None, y_window=150 * UM,
                 radius=50 * UM, select="left"):
        if not bases:
            raise InferenceError("no basis maps supplied")
        self.trap = trap
        self.endcaps = endcaps
        self.moving = moving
        self.select = select
        self.radius = radius
        self.y_window = y_window
        fixed = fixed_charges or ChargeState()
        fixed = fixed.with_fiber(moving, 0.0, 0.0)
        self.d_values = np.array(sorted(bases))
        self._static, self._unit, self._ref = {}, {}, {}
        for d in self.d_values:
            maps = bases[d]
            ref = maps[RF]
            for m in maps.values():
                if m.geometry_hash != ref.geometry_hash or not m.same_grid(ref):
                    raise StaleBasisError(f"inconsistent basis set at d = {d / UM:.1f} um")
            static = pseudopotential(ref, trap).values + endcap_energy(maps, endcaps, trap)
            static = static + charge_energy(maps, fixed, trap) + patch_energy(patch, ref.x, trap)
            static = np.asarray(static) * np.ones_like(ref.values)
            units = []
            for kind in ("f", "s"):
                tag = charge_tag(moving, kind)
                if tag not in maps:
                    raise StaleBasisError(f"missing basis {tag} at d = {d / UM:.1f} um")
                units.append(trap.ion_charge / SIGMA0 * maps[tag].values)
            self._static[d] = EnergyMap(ref.x, ref.y, static, ref.geometry_hash)
            self._unit[d] = units
            try:
                obs = analyze(self._static[d], trap.ion_mass, radius, y_window, select=select)
                self._ref[d] = obs.wells.axial_curvature if obs.wells is not None else None
            except LandscapeError:
                self._ref[d] = None

    def _key(self, d):
        i = int(np.argmin(np.abs(self.d_values - d)))
        if abs(self.d_values[i] - d) > 1e-9:
            raise InferenceError(f"no basis for d = {d / UM:.3f} um")
        return self.d_values[i]

    def energy(self, d, sigma_f, sigma_s):
        k = self._key(d)
        uf, us = self._unit[k]
        return self._static[k] + (sigma_f * uf + sigma_s * us)

    def predict_one(self, d, sigma_f, sigma_s):
        k = self._key(d)
        emap = self.energy(k, sigma_f, sigma_s)
        try:
            obs = analyze(emap, self.trap.ion_mass, self.radius, self.y_window, self._ref[k], self.select)
        except LandscapeError:
            return Prediction(float(d), "transition")
        if obs.kind == "transition":
            return Prediction(float(d), "transition")
        return Prediction(float(d), obs.kind, obs.x, obs.omega_axial)

    def predict(self, sigma_f, sigma_s, d_values=None):
        d_values = self.d_values if d_values is None else d_values
        return [self.predict_one(d, sigma_f, sigma_s) for d in d_values]


def predict_observables(sigma_f, sigma_s, dataset: FiberScanDataset, model: ScanModel):
    """Predictions at every measured distance of ``dataset``."""
    return model.predict(sigma_f, sigma_s, dataset.d)


@dataclass
class ResidualReport:
    mean: float
    included: np.ndarray
    excluded: list
    terms: np.ndarray


def residual_report(predictions, dataset: FiberScanDataset, budget: ErrorBudget):
    """Mean over included points of (dx/w_x)^2 + (domega/w_omega)^2."""
    if len(predictions) != len(dataset):
        raise InferenceError("predictions and dataset differ in length")
    w_x, w_w = budget.weights(dataset)
    pred_ok = np.array([p.kind != "transition" for p in predictions])
    include = pred_ok & dataset.usable
    excluded = [float(dataset.d[i]) for i in np.nonzero(~include)[0]]
    if not include.any():
        raise InferenceError("every point is excluded; residual undefined")
    px = np.array([p.x for p in predictions])
    pw = np.array([p.omega for p in predictions])
    terms = np.full(len(dataset), np.nan)
    idx = np.nonzero(include)[0]
    terms[idx] = ((px[idx] - dataset.x[idx]) / w_x[idx]) ** 2 + ((pw[idx] - dataset.omega[idx]) / w_w[idx]) ** 2
    return ResidualReport(float(np.mean(terms[idx])), include, excluded, terms)


def residual(predictions, dataset, budget: ErrorBudget):
    return residual_report(predictions, dataset, budget).mean


def _objective(model, dataset, budget, sf, ss):
    try:
        return residual(predict_observables(sf, ss, dataset, model), dataset, budget)
    except InferenceError:
        return float("nan")


def grid_scan(dataset, model: ScanModel, budget: ErrorBudget | None = None, sigma_f_range=(-15.0, 60.0),
              sigma_s_range=(-15.0, 60.0), step=1.0, jobs=1):
    """Mean residual on a Cartesian grid of (sigma_f, sigma_s) in e/um^2."""
    budget = budget or ErrorBudget()
    if not step > 0:
        raise ValueError("step must be positive")
    if not dataset.usable.any():
        raise InferenceError("dataset has no usable points (all flagged transition or missing)")
    sf = _axis(sigma_f_range, step)
    ss = _axis(sigma_s_range, step)
    rows = Parallel(n_jobs=jobs)(
        delayed(_row)(model, dataset, budget, f, ss) for f in sf
    )
    values = np.array(rows)
    if not np.isfinite(values).any():
        raise InferenceError("every grid point predicts transitions only; widen or move the scan ranges")
    return ResidualSurface(sf, ss, values)


def _axis(r, step):
    lo, hi = float(r[0]), float(r[1])
    if hi < lo or not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValueError("invalid scan range")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def _row(model, dataset, budget, f, ss):
    return [_objective(model, dataset, budget, f, s) for s in ss]


def refine(dataset, model: ScanModel, initial, constrained=False, budget: ErrorBudget | None = None,
           xatol=1e-3, fatol=1e-9, maxiter=400):
    """Nelder-Mead descent of the mean residual from ``initial``.

    In constrained mode a single density is fitted with sigma_f = sigma_s.
    """
    budget = budget or ErrorBudget()
    penalty = 1e6

    def f(p):
        sf, ss = (p[0], p[0]) if constrained else (p[0], p[1])
        val = _objective(model, dataset, budget, sf, ss)
        return penalty if not np.isfinite(val) else val

    x0 = np.array([float(np.mean(initial))] if constrained else [float(initial[0]), float(initial[1])])
    simplex = np.vstack([x0] + [x0 + 0.5 * np.eye(len(x0))[i] for i in range(len(x0))])
    res = minimize(f, x0, method="Nelder-Mead",
                   options={"xatol": xatol, "fatol": fatol, "maxiter": maxiter, "initial_simplex": simplex})
    if not res.success:
        raise ConvergenceError(f"refinement did not converge: {res.message}")
    sf, ss = (res.x[0], res.x[0]) if constrained else (res.x[0], res.x[1])
    report = residual_report(predict_observables(sf, ss, dataset, model), dataset, budget)
    return InferenceResult(float(sf), float(ss), constrained, report.mean, report.excluded, int(res.nfev))


def infer(dataset, model, budget=None, sigma_f_range=(-15.0, 60.0), sigma_s_range=(-15.0, 60.0), step=1.0,
          constrained=False, jobs=1):
    """Grid scan followed by refinement from the grid minimum."""
    surface = grid_scan(dataset, model, budget, sigma_f_range, sigma_s_range, step, jobs)
    result = refine(dataset, model, surface.minimum, constrained, budget)
    result.surface = surface
    return result


def position_offset_sweep(dataset, offsets, model_for_offset, initial, budget=None, constrained=False):
    """Refine at every candidate fiber x offset; return (best offset, results by offset).

    ``model_for_offset`` builds the :class:`ScanModel` for one offset (m).
    """
    offsets = list(offsets)
    if not offsets:
        raise ValueError("no offsets given")
    results = {}
    for off in offsets:
        r = refine(dataset, model_for_offset(off), initial, constrained, budget)
        r.x_offset = off
        results[off] = r
    best = min(offsets, key=lambda o: (results[o].mean_residual, abs(o)))
    return best, results
