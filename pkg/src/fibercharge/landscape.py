"""Equilibrium position, well type and secular frequencies from energy maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import UM


class LandscapeError(ValueError):
    pass


class NotAWellError(LandscapeError):
    """The fitted quadratic is not positive definite; use classify_wells."""


@dataclass
class ParaboloidFit:
    center: tuple
    c_major: float
    c_minor: float
    theta: float
    offset: float
    rms: float
    range: float = 0.0
    n_points: int = 0

    @property
    def x(self):
        return self.center[0]

    @property
    def y(self):
        return self.center[1]


@dataclass
class WellClassification:
    kind: str  # single | double | transition
    minima: list = field(default_factory=list)  # [(x, phi)]
    barrier: float = 0.0
    axial_curvature: float = float("nan")


@dataclass
class Observation:
    kind: str
    x: float = float("nan")
    y: float = float("nan")
    omega_axial: float = float("nan")
    omega_radial: float = float("nan")
    fit: ParaboloidFit | None = None
    wells: WellClassification | None = None


def find_minimum_seed(emap, percentile=1.0):
    """Mean position of all nodes in the lowest ``percentile`` of the map."""
    v = emap.values
    if not v.max() > v.min():
        raise LandscapeError("map is constant; no minimum to seed")
    thr = np.percentile(v, percentile)
    ix, iy = np.nonzero(v <= thr)
    return float(emap.x[ix].mean()), float(emap.y[iy].mean())


def _disk(emap, center, radius):
    x0, y0 = center
    if (x0 - radius < emap.x[0] - 1e-12 or x0 + radius > emap.x[-1] + 1e-12
            or y0 - radius < emap.y[0] - 1e-12 or y0 + radius > emap.y[-1] + 1e-12):
        raise LandscapeError(f"fit disk at ({x0 / UM:.1f}, {y0 / UM:.1f}) um leaves the map")
    ix = np.nonzero(np.abs(emap.x - x0) <= radius)[0]
    iy = np.nonzero(np.abs(emap.y - y0) <= radius)[0]
    X, Y = np.meshgrid(emap.x[ix], emap.y[iy], indexing="ij")
    V = emap.values[np.ix_(ix, iy)]
    inside = (X - x0) ** 2 + (Y - y0) ** 2 <= radius**2 * (1 + 1e-12)
    return X[inside], Y[inside], V[inside]


def fit_paraboloid(emap, seed, radius=50 * UM):
    """Least-squares rotated paraboloid over a disk around ``seed``.

    Model: offset + c_major u^2 / 2 + c_minor v^2 / 2 with (u, v) the frame
    rotated by ``theta`` (angle of the major axis to x) about the center.
    """
    X, Y, V = _disk(emap, seed, radius)
    if len(V) < 6:
        raise LandscapeError("too few nodes inside the fit disk")
    u = (X - seed[0]) / radius
    v = (Y - seed[1]) / radius
    A = np.column_stack([np.ones_like(u), u, v, u * u, u * v, v * v])
    vscale = np.max(np.abs(V - V.mean())) or 1.0
    coef, *_ = np.linalg.lstsq(A, (V - V.mean()) / vscale, rcond=None)
    coef = coef * vscale
    coef[0] += V.mean()
    resid = A @ coef - V
    H = np.array([[2 * coef[3], coef[4]], [coef[4], 2 * coef[5]]]) / radius**2
    g = coef[1:3] / radius
    evals, evecs = np.linalg.eigh(H)
    if evals[0] <= 0:
        raise NotAWellError("fitted Hessian is not positive definite")
    shift = -np.linalg.solve(H, g)
    center = (seed[0] + shift[0], seed[1] + shift[1])
    offset = coef[0] + 0.5 * g @ shift
    major = evecs[:, 1]
    theta = float(np.arctan2(major[1], major[0]))
    if theta <= -np.pi / 2:
        theta += np.pi
    elif theta > np.pi / 2:
        theta -= np.pi
    return ParaboloidFit(
        center=(float(center[0]), float(center[1])),
        c_major=float(evals[1]),
        c_minor=float(evals[0]),
        theta=theta,
        offset=float(offset),
        rms=float(np.sqrt(np.mean(resid**2))),
        range=float(V.max() - V.min()),
        n_points=len(V),
    )


def secular_frequency(curvature, mass):
    """Angular secular frequency sqrt(c / M)."""
    if not curvature > 0:
        raise LandscapeError("curvature must be positive")
    if not mass > 0:
        raise ValueError("mass must be positive")
    return float(np.sqrt(curvature / mass))


def axial_cut(emap, y0):
    """Samples of the map along x through the row nearest to ``y0``."""
    j = int(np.argmin(np.abs(emap.y - y0)))
    return emap.x.copy(), emap.values[:, j].copy()


def _vertex(xs, fs, i):
    """Parabolic refinement of an extremum at interior sample ``i``."""
    f0, f1, f2 = fs[i - 1], fs[i], fs[i + 1]
    h = xs[i + 1] - xs[i]
    den = f0 - 2 * f1 + f2
    if den == 0:
        return xs[i], f1
    t = 0.5 * (f0 - f2) / den
    return xs[i] + t * h, f1 - 0.25 * (f0 - f2) * t


def local_minima(values):
    """Indices of strict interior local minima after a 3-node moving average."""
    s = np.convolve(values, np.ones(3) / 3, mode="same")
    s[0], s[-1] = values[0], values[-1]
    inner = (s[1:-1] < s[:-2]) & (s[1:-1] < s[2:])
    return np.nonzero(inner)[0] + 1


def classify_wells(emap, cut=None, radius=50 * UM, reference_curvature=None,
                   rms_fraction=0.05, curvature_fraction=0.1, select="left", y0=None):
    """Count wells along the soft axis and flag anharmonic configurations.

    ``cut`` is an ``(x, phi)`` pair along the trap axis; by default it is taken
    through the percentile seed. A configuration is ``transition`` when the
    paraboloid residual over the fit disk exceeds ``rms_fraction`` of the
    potential range inside the disk, or when the axial curvature at the
    minimum drops below ``curvature_fraction * reference_curvature``.
    """
    if y0 is None:
        y0 = find_minimum_seed(emap)[1]
    if cut is None:
        cut = axial_cut(emap, y0)
    xs, fs = (np.asarray(a, dtype=float) for a in cut)
    idx = local_minima(fs)
    if len(idx) == 0:
        raise LandscapeError("no confined minimum along the axial cut")
    minima = [_vertex(xs, fs, i) for i in idx]
    h = xs[1] - xs[0]
    if len(idx) > 2:
        return WellClassification("transition", minima)
    chosen = _select(minima, select)
    i_sel = idx[minima.index(chosen)]
    curv = (fs[i_sel - 1] - 2 * fs[i_sel] + fs[i_sel + 1]) / h**2
    barrier = 0.0
    kind = "single"
    if len(idx) == 2:
        lo, hi = sorted(idx)
        top = lo + int(np.argmax(fs[lo:hi + 1]))
        _, ftop = _vertex(xs, fs, top) if lo < top < hi else (xs[top], fs[top])
        barrier = float(ftop - max(m[1] for m in minima))
        kind = "double" if barrier > 0 else "transition"
    if kind != "transition":
        if reference_curvature is not None and curv < curvature_fraction * reference_curvature:
            kind = "transition"
        else:
            try:
                fit = fit_paraboloid(emap, _snap(emap, (chosen[0], y0)), radius)
                if fit.rms > rms_fraction * fit.range:
                    kind = "transition"
            except NotAWellError:
                kind = "transition"
    return WellClassification(kind, minima, barrier if kind == "double" else 0.0, float(curv))


def _select(minima, select):
    if len(minima) == 1:
        return minima[0]
    if select == "left":
        return min(minima, key=lambda m: m[0])
    if select == "right":
        return max(minima, key=lambda m: m[0])
    if select == "deepest":
        return min(minima, key=lambda m: m[1])
    raise ValueError(f"unknown well selection {select!r}")


def analyze(emap, mass, radius=50 * UM, y_window=None, reference_curvature=None, select="left", percentile=1.0):
    """Classify the landscape and extract position and secular frequencies.

    Returns an :class:`Observation`; for ``transition`` no position or
    frequency is reported.
    """
    search = emap.window(y_window) if y_window is not None else emap
    seed = find_minimum_seed(search, percentile)
    cut = axial_cut(emap, seed[1])
    wells = classify_wells(emap, cut, radius, reference_curvature, select=select, y0=seed[1])
    if wells.kind == "transition":
        return Observation("transition", wells=wells)
    if wells.kind == "double":
        x_sel = _select(wells.minima, select)[0]
        start = (x_sel, seed[1])
    else:
        start = seed
    fit = fit_paraboloid(emap, _snap(emap, start), radius)
    # one re-centering step so the disk sits on the fitted minimum
    if np.hypot(fit.x - start[0], fit.y - start[1]) > min(emap.spacing):
        fit = fit_paraboloid(emap, _snap(emap, fit.center), radius)
    return Observation(
        wells.kind,
        x=fit.x,
        y=fit.y,
        omega_axial=secular_frequency(fit.c_minor, mass),
        omega_radial=secular_frequency(fit.c_major, mass),
        fit=fit,
        wells=wells,
    )


def _snap(emap, point):
    i = int(np.argmin(np.abs(emap.x - point[0])))
    j = int(np.argmin(np.abs(emap.y - point[1])))
    return float(emap.x[i]), float(emap.y[j])


# ---------------------------------------------------------------------------
# axial law


@dataclass
class AxialLawFit:
    """omega_ax^2 = alpha * V_ec,M + omega0^2 (SI: rad^2 s^-2 V^-1, rad^2 s^-2).

    The kHz^2/mV convention expresses omega in units of 10^3 rad/s.
    """

    alpha: float
    omega0_sq: float
    covariance: np.ndarray
    rms: float = 0.0

    @property
    def alpha_khz2_per_mv(self):
        return self.alpha * 1e-9

    @property
    def omega0(self):
        return float(np.sqrt(self.omega0_sq)) if self.omega0_sq >= 0 else float("nan")

    @property
    def omega0_over_2pi_khz(self):
        return self.omega0 / (2 * np.pi * 1e3)

    def omega(self, v):
        return np.sqrt(self.alpha * np.asarray(v) + self.omega0_sq)


def fit_axial_law(voltages, omegas):
    """Linear least squares of omega^2 against the mean endcap voltage."""
    v = np.asarray(voltages, dtype=float)
    w2 = np.asarray(omegas, dtype=float) ** 2
    if len(v) != len(w2) or len(v) < 2:
        raise ValueError("need at least two (voltage, frequency) points")
    A = np.column_stack([v, np.ones_like(v)])
    if np.linalg.matrix_rank(A) < 2:
        raise LandscapeError("rank-deficient design: voltages must differ")
    scale = np.abs(w2).max() or 1.0
    coef, *_ = np.linalg.lstsq(A, w2 / scale, rcond=None)
    coef = coef * scale
    resid = A @ coef - w2
    dof = len(v) - 2
    cov = np.linalg.inv(A.T @ A) * (resid @ resid / dof) if dof > 0 else np.zeros((2, 2))
    return AxialLawFit(float(coef[0]), float(coef[1]), cov, float(np.sqrt(np.mean(resid**2))))


def calibrate_endcaps(alpha_exp, alpha_sim):
    """Endcap voltage scale that maps the simulated axial law onto the measured one."""
    if not (alpha_exp > 0 and alpha_sim > 0):
        raise ValueError("alpha values must be positive")
    return alpha_exp / alpha_sim
