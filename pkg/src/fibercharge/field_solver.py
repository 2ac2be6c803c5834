"""Unit-excitation basis potentials on a graded Cartesian grid.

The variable-coefficient Poisson problem div(eps grad U) = -rho is discretized
with a vertex-centred finite-volume stencil on a tensor-product grid that is
fine around the trap center and grows geometrically towards the grounded box.

Electrode surfaces are located between nodes from their signed distance
functions and enter the stencil through a shortened link (symmetric cut-link
Dirichlet treatment), which keeps the matrix SPD and the scheme second order.
Dielectric jumps are handled by harmonic averaging of eps along each link, and
surface charges are deposited with cloud-in-cell weights.

All seven basis problems of one geometry share the matrix, so one algebraic
multigrid hierarchy (classical Ruge-Stuben, pyamg) is built per geometry and reused for every
right-hand side. Results are deterministic for a fixed grid.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np
import pyamg
import scipy.sparse as sp
from scipy import integrate
from scipy.interpolate import RectBivariateSpline

from .constants import E_PER_UM2, EPS0, SIGMA0, UM, V0
from .geometry import GeometrySpec

FORMAT_VERSION = 1

RF = "rf_unit"
EC_LEFT = "ec_left_unit"
EC_RIGHT = "ec_right_unit"


def charge_tag(label, kind):
    return f"charge({label},{kind})_unit"


CHARGE_TAGS = tuple(charge_tag(l, k) for l in ("M", "P") for k in ("f", "s"))
ALL_TAGS = (RF, EC_LEFT, EC_RIGHT) + CHARGE_TAGS

GROUPS = ("rf", "ground", "ec_left", "ec_right")
_GROUP_FOR_TAG = {RF: "rf", EC_LEFT: "ec_left", EC_RIGHT: "ec_right"}


class SolverError(RuntimeError):
    """The iterative solve did not reach the requested residual."""

    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = list(residual_history)


class StaleBasisError(ValueError):
    """Basis maps come from different geometries or grids."""


# ---------------------------------------------------------------------------
# grids


def graded_axis(core_half, core_spacing, growth, max_spacing, half_size, center=0.0,
                mid_half=0.0, mid_spacing=None):
    """Symmetric node coordinates with a uniform core and geometric grading.

    Nodes sit at ``center + k * core_spacing`` for ``|k * core_spacing| <=
    core_half``; beyond, spacings grow by ``growth``. Inside ``mid_half`` they
    are capped at ``mid_spacing`` (so the electrodes stay resolved), further
    out at ``max_spacing``, until the box wall at ``half_size``.
    """
    n_core = int(round(core_half / core_spacing))
    pos = [k * core_spacing for k in range(n_core + 1)]
    h = core_spacing
    while True:
        cap = mid_spacing if (mid_spacing and pos[-1] < mid_half) else max_spacing
        h = min(h * growth, cap)
        nxt = pos[-1] + h
        if nxt >= half_size - abs(center) - 0.5 * h:
            break
        pos.append(nxt)
    pos.append(half_size - abs(center))
    right = np.asarray(pos)
    # mirror; the wall on the other side is at half_size as well
    nodes = np.concatenate([-right[:0:-1], right]) + center
    lo, hi = -half_size, half_size
    nodes[0], nodes[-1] = lo, hi
    if nodes[1] <= lo or nodes[-2] >= hi:
        raise ValueError("grid axis does not fit into the box")
    return nodes


def refine_axis(nodes):
    """Insert midpoints (halves every spacing); coarse nodes stay nodes."""
    mid = 0.5 * (nodes[1:] + nodes[:-1])
    out = np.empty(2 * len(nodes) - 1)
    out[0::2] = nodes
    out[1::2] = mid
    return out


@dataclass(frozen=True)
class GridSpec:
    core_half: tuple = (400 * UM, 150 * UM, 60 * UM)
    core_spacing: float = 10 * UM
    growth: float = 1.3
    max_spacing: float = 1.5e-3
    refinements: int = 0
    mid_half: tuple = (2.9e-3, 1.6e-3, 1.6e-3)
    mid_spacing: float = 50 * UM

    def axes(self, domain):
        halves = (domain.half_x, domain.half_y, domain.half_z)
        out = []
        for c, L, m in zip(self.core_half, halves, self.mid_half):
            ax = graded_axis(c, self.core_spacing, self.growth, self.max_spacing, L,
                             mid_half=m, mid_spacing=self.mid_spacing)
            for _ in range(self.refinements):
                ax = refine_axis(ax)
            out.append(ax)
        return tuple(out)

    def refined(self):
        return replace(self, refinements=self.refinements + 1)


@dataclass(frozen=True)
class MapSpec:
    """Uniform 2D output grid in the xy plane at z = 0."""

    x_half: float = 500 * UM
    y_half: float = 300 * UM
    spacing: float = 5 * UM

    def axes(self):
        nx = int(round(2 * self.x_half / self.spacing)) + 1
        ny = int(round(2 * self.y_half / self.spacing)) + 1
        return (np.linspace(-self.x_half, self.x_half, nx), np.linspace(-self.y_half, self.y_half, ny))


# ---------------------------------------------------------------------------
# maps


@dataclass
class PotentialMap:
    """Scalar potential on a regular xy grid at z = 0.

    ``values`` has shape ``(len(x), len(y))``. ``dz`` optionally holds the
    out-of-plane derivative dU/dz on the same grid, needed when the rf
    quadrupole is not aligned with the map plane.
    """

    x: np.ndarray
    y: np.ndarray
    values: np.ndarray
    tag: str
    geometry_hash: str = ""
    dz: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.x), len(self.y)):
            raise ValueError("values shape does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("potential map contains non-finite values")
        if self.dz is not None:
            self.dz = np.asarray(self.dz, dtype=float)

    @property
    def spacing(self):
        return float(self.x[1] - self.x[0]), float(self.y[1] - self.y[0])

    @property
    def origin(self):
        return float(self.x[0]), float(self.y[0])

    def same_grid(self, other):
        return (
            self.values.shape == other.values.shape
            and np.allclose(self.x, other.x, rtol=0, atol=1e-12)
            and np.allclose(self.y, other.y, rtol=0, atol=1e-12)
        )

    def scaled(self, factor, tag=None):
        dz = None if self.dz is None else self.dz * factor
        return PotentialMap(self.x, self.y, self.values * factor, tag or self.tag, self.geometry_hash, dz, dict(self.meta))

    def __add__(self, other):
        if not self.same_grid(other):
            raise StaleBasisError("maps live on different grids")
        dz = None
        if self.dz is not None and other.dz is not None:
            dz = self.dz + other.dz
        return PotentialMap(self.x, self.y, self.values + other.values, f"{self.tag}+{other.tag}", self.geometry_hash, dz)

    def spline(self):
        return RectBivariateSpline(self.x, self.y, self.values, kx=3, ky=3, s=0)

    def __call__(self, x, y):
        return self.spline().ev(x, y)

    def header(self):
        return {
            "format": "fibercharge-potential-map",
            "version": FORMAT_VERSION,
            "origin_um": [self.origin[0] / UM, self.origin[1] / UM],
            "spacing_um": [self.spacing[0] / UM, self.spacing[1] / UM],
            "dims": list(self.values.shape),
            "tag": self.tag,
            "geometry_hash": self.geometry_hash,
            "has_dz": self.dz is not None,
            "meta": self.meta,
        }

    def save(self, path):
        arrays = {"values": self.values}
        if self.dz is not None:
            arrays["dz"] = self.dz
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(self.header(), sort_keys=True)), **arrays)

    @classmethod
    def load(cls, path, expect_hash=None, expect_tag=None):
        try:
            with np.load(path, allow_pickle=False) as data:
                header = json.loads(str(data["header"]))
                values = data["values"]
                dz = data["dz"] if "dz" in data.files else None
        except (OSError, ValueError, KeyError) as exc:
            raise StaleBasisError(f"unreadable basis file {path}: {exc}") from exc
        if header.get("format") != "fibercharge-potential-map" or header.get("version") != FORMAT_VERSION:
            raise StaleBasisError(f"{path}: unrecognised header")
        if expect_hash is not None and header["geometry_hash"] != expect_hash:
            raise StaleBasisError(f"{path}: geometry hash {header['geometry_hash']} != {expect_hash}")
        if expect_tag is not None and header["tag"] != expect_tag:
            raise StaleBasisError(f"{path}: tag {header['tag']} != {expect_tag}")
        (x0, y0), (hx, hy), (nx, ny) = header["origin_um"], header["spacing_um"], header["dims"]
        x = (x0 + hx * np.arange(nx)) * UM
        y = (y0 + hy * np.arange(ny)) * UM
        return cls(x, y, values, header["tag"], header["geometry_hash"], dz, header.get("meta", {}))

    def to_csv(self, path, scale=1.0, column="U_V"):
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        table = np.column_stack([X.ravel() / UM, Y.ravel() / UM, self.values.ravel() * scale])
        np.savetxt(path, table, delimiter=",", header=f"x_um,y_um,{column}", comments="", fmt="%.10g")


def gradient(pmap: PotentialMap, point):
    """(dU/dx, dU/dy) at ``point`` from the bicubic interpolant."""
    x, y = point
    hx, hy = pmap.spacing
    if not (pmap.x[0] + 2 * hx <= x <= pmap.x[-1] - 2 * hx and pmap.y[0] + 2 * hy <= y <= pmap.y[-1] - 2 * hy):
        raise ValueError(f"point {point} is not at least two cells inside the map")
    s = pmap.spline()
    return float(s.ev(x, y, dx=1)), float(s.ev(x, y, dy=1))


def grid_gradient(pmap: PotentialMap):
    """Node-wise second-order central differences (one-sided at the edges)."""
    return np.gradient(pmap.values, pmap.x, pmap.y, edge_order=2)


# ---------------------------------------------------------------------------
# discretization


@dataclass
class SolveReport:
    iterations: int
    residual: float
    wall_time: float
    residual_history: list = field(default_factory=list)


def _dual_widths(nodes):
    w = np.empty_like(nodes)
    w[1:-1] = 0.5 * (nodes[2:] - nodes[:-2])
    w[0] = 0.5 * (nodes[1] - nodes[0])
    w[-1] = 0.5 * (nodes[-1] - nodes[-2])
    return w


def _cic(nodes, p):
    i = np.clip(np.searchsorted(nodes, p) - 1, 0, len(nodes) - 2)
    t = (p - nodes[i]) / (nodes[i + 1] - nodes[i])
    return i, np.clip(t, 0.0, 1.0)


class Discretization:
    """Matrix, boundary data and charge deposition for one geometry."""

    def __init__(self, spec: GeometrySpec, grid: GridSpec | None = None, theta_min=1e-3):
        self.spec = spec
        self.grid = grid or GridSpec()
        self.axes = self.grid.axes(spec.domain)
        xs, ys, zs = self.axes
        self.shape = (len(xs), len(ys), len(zs))
        X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij", sparse=True)

        # electrodes: union level set and owner of each node
        phi = np.full(self.shape, np.inf)
        owner = np.full(self.shape, -1, dtype=np.int16)
        for n, el in enumerate(spec.electrodes):
            d = np.broadcast_to(el.sdf(X, Y, Z), self.shape)
            closer = d < phi
            phi[closer] = d[closer]
            owner[closer] = n
        dirichlet = phi <= 0
        boundary = np.zeros(self.shape, dtype=bool)
        boundary[[0, -1], :, :] = True
        boundary[:, [0, -1], :] = True
        boundary[:, :, [0, -1]] = True
        owner[boundary & ~dirichlet] = -1
        dirichlet |= boundary
        phi[boundary] = np.where(phi[boundary] <= 0, phi[boundary], -1.0)

        # dielectric level set and node permittivity
        psi = np.full(self.shape, np.inf)
        eps = np.ones(self.shape)
        for f in spec.fibers:
            d = np.broadcast_to(f.body.sdf(X, Y, Z), self.shape)
            psi = np.minimum(psi, d)
            eps[d < 0] = f.spec.relative_permittivity

        free = ~dirichlet
        index = np.full(self.shape, -1, dtype=np.int64)
        self.n_free = int(free.sum())
        index[free] = np.arange(self.n_free)
        self.free = free
        self.index = index
        self.owner = owner

        groups = [el.group for el in spec.electrodes]
        group_index = np.array([GROUPS.index(g) for g in groups] or [0], dtype=np.int64)
        self.group_rhs = {g: np.zeros(self.n_free) for g in GROUPS}
        diag = np.zeros(self.n_free)
        rows, cols, vals = [], [], []
        widths = [_dual_widths(a) for a in self.axes]

        for axis in range(3):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[axis] = slice(None, -1)
            hi[axis] = slice(1, None)
            lo, hi = tuple(lo), tuple(hi)
            dist = np.diff(self.axes[axis])
            other = [a for a in range(3) if a != axis]
            shp = [1, 1, 1]
            shp[axis] = -1
            area = np.ones([1, 1, 1])
            for a in other:
                s = [1, 1, 1]
                s[a] = -1
                area = area * widths[a].reshape(s)
            coef = area / dist.reshape(shp)

            psi_lo, psi_hi = psi[lo], psi[hi]
            eps_lo, eps_hi = eps[lo], eps[hi]
            cross = (psi_lo < 0) != (psi_hi < 0)
            with np.errstate(divide="ignore", invalid="ignore"):
                s = np.where(cross, psi_lo / (psi_lo - psi_hi), 0.5)
            s = np.clip(s, 0.0, 1.0)
            eps_link = np.where(cross, 1.0 / (s / eps_lo + (1 - s) / eps_hi), eps_lo)
            a = np.broadcast_to(coef, eps_link.shape) * eps_link

            f_lo, f_hi = free[lo], free[hi]
            both = f_lo & f_hi
            i_lo, i_hi = index[lo][both], index[hi][both]
            ab = a[both]
            rows += [i_lo, i_hi]
            cols += [i_hi, i_lo]
            vals += [-ab, -ab]
            np.add.at(diag, i_lo, ab)
            np.add.at(diag, i_hi, ab)

            # free node next to a Dirichlet node: shorten the link to the surface
            for f_mask, d_sl, f_sl in ((f_lo & ~f_hi, hi, lo), (f_hi & ~f_lo, lo, hi)):
                i_free = index[f_sl][f_mask]
                phi_f = phi[f_sl][f_mask]
                phi_d = phi[d_sl][f_mask]
                own = owner[d_sl][f_mask]
                with np.errstate(divide="ignore", invalid="ignore"):
                    theta = np.where(own >= 0, phi_f / (phi_f - phi_d), 1.0)
                theta = np.clip(theta, theta_min, 1.0)
                # link permittivity taken from the free side
                w = a[f_mask] / theta
                np.add.at(diag, i_free, w)
                own_group = np.where(own >= 0, group_index[np.maximum(own, 0)], -1)
                for gi, g in enumerate(GROUPS):
                    m = own_group == gi
                    if m.any():
                        np.add.at(self.group_rhs[g], i_free[m], w[m])

        rows.append(np.arange(self.n_free))
        cols.append(np.arange(self.n_free))
        vals.append(diag)
        self.matrix = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_free, self.n_free),
        )
        self.dirichlet_value = {g: np.zeros(self.shape) for g in self.group_rhs}
        for n, g in enumerate(groups):
            self.dirichlet_value[g][(owner == n) & dirichlet] = V0
        self._ml = None

    # -- right-hand sides --------------------------------------------------

    def deposit(self, points, charges):
        """Cloud-in-cell deposit of point charges (C) onto nodes."""
        xs, ys, zs = self.axes
        ix, tx = _cic(xs, points[:, 0])
        iy, ty = _cic(ys, points[:, 1])
        iz, tz = _cic(zs, points[:, 2])
        nx, ny, nz = self.shape
        out = np.zeros(nx * ny * nz)
        for dx, wx in ((0, 1 - tx), (1, tx)):
            for dy, wy in ((0, 1 - ty), (1, ty)):
                for dz, wz in ((0, 1 - tz), (1, tz)):
                    flat = ((ix + dx) * ny + (iy + dy)) * nz + (iz + dz)
                    out += np.bincount(flat, weights=charges * wx * wy * wz, minlength=out.size)
        return out.reshape(self.shape)

    def surface_quadrature(self, label, kind):
        fiber = self.spec.fiber(label)
        h = self.grid.core_spacing / 2 ** self.grid.refinements
        if kind == "f":
            return fiber.facet.quadrature(0.5 * h)
        side = fiber.side
        ys = self.axes[1]
        y0 = side.base[1]
        t_nodes = (ys - y0) * side.axis[1]
        t_nodes = t_nodes[(t_nodes > 0) & (t_nodes < side.length)]
        edges = np.unique(np.concatenate([[0.0], t_nodes, [side.length]]))
        edges = refine_axis(refine_axis(edges))
        return side.quadrature(0.5 * h, along=edges)

    def rhs(self, tag):
        if tag in _GROUP_FOR_TAG:
            return self.group_rhs[_GROUP_FOR_TAG[tag]].copy(), _GROUP_FOR_TAG[tag]
        label, kind = _parse_charge_tag(tag)
        pts, wts = self.surface_quadrature(label, kind)
        q = self.deposit(pts, wts * SIGMA0 * E_PER_UM2)
        return q[self.free] / EPS0, None

    # -- solve -------------------------------------------------------------

    def hierarchy(self):
        if self._ml is None:
            self._ml = pyamg.ruge_stuben_solver(self.matrix, max_coarse=500)
        return self._ml

    def solve(self, tag, tol=1e-8, maxiter=400):
        b, group = self.rhs(tag)
        u_dir = np.zeros(self.shape) if group is None else self.dirichlet_value[group]
        return self._solve_vector(b, u_dir, tag, tol, maxiter)

    def solve_combination(self, weights, tol=1e-8, maxiter=400):
        """Solve with several excitations applied at once (``{tag: coefficient}``)."""
        b = np.zeros(self.n_free)
        u_dir = np.zeros(self.shape)
        for tag, c in weights.items():
            bt, group = self.rhs(tag)
            b += c * bt
            if group is not None:
                u_dir = u_dir + c * self.dirichlet_value[group]
        return self._solve_vector(b, u_dir, "+".join(weights), tol, maxiter)

    def _solve_vector(self, b, u_dir, label, tol, maxiter):
        t0 = time.perf_counter()
        history = []
        bnorm = np.linalg.norm(b)
        if bnorm == 0:
            u_free = np.zeros_like(b)
            iterations, rel = 0, 0.0
        else:
            ml = self.hierarchy()
            u_free = ml.solve(b, tol=tol, maxiter=maxiter, accel="cg", residuals=history)
            rel = float(np.linalg.norm(b - self.matrix @ u_free) / bnorm)
            iterations = max(len(history) - 1, 0)
            history = [h / bnorm for h in history]
            if not rel <= tol * 1.0001:
                raise SolverError(f"{label}: relative residual {rel:.3e} > {tol:.1e} after {iterations} iterations",
                                  history)
        u = u_dir.copy()
        u[self.free] = u_free
        report = SolveReport(iterations, rel, time.perf_counter() - t0, history)
        return u, report

    # -- output ------------------------------------------------------------

    def z0_index(self):
        zs = self.axes[2]
        k = int(np.argmin(np.abs(zs)))
        if abs(zs[k]) > 1e-15:
            raise ValueError("grid has no node at z = 0")
        return k

    def to_map(self, u, tag, map_spec: MapSpec | None = None):
        map_spec = map_spec or MapSpec()
        mx, my = map_spec.axes()
        xs, ys, zs = self.axes
        k = self.z0_index()
        ix = _window(xs, mx[0], mx[-1])
        iy = _window(ys, my[0], my[-1])
        sx, sy = xs[ix], ys[iy]
        sl = u[ix][:, iy, k]
        vals = RectBivariateSpline(sx, sy, sl, kx=3, ky=3, s=0)(mx, my)
        dz_nodes = (u[ix][:, iy, k + 1] - u[ix][:, iy, k - 1]) / (zs[k + 1] - zs[k - 1])
        dz = RectBivariateSpline(sx, sy, dz_nodes, kx=3, ky=3, s=0)(mx, my)
        meta = {"grid": [len(a) for a in self.axes], "core_spacing_um": self.grid.core_spacing / UM,
                "refinements": self.grid.refinements}
        return PotentialMap(mx, my, vals, tag, self.spec.hash(), dz, meta)


def _window(nodes, lo, hi, pad=3):
    i0 = max(int(np.searchsorted(nodes, lo)) - pad, 0)
    i1 = min(int(np.searchsorted(nodes, hi)) + pad, len(nodes))
    return slice(i0, i1)


def _parse_charge_tag(tag):
    if not (tag.startswith("charge(") and tag.endswith(")_unit")):
        raise ValueError(f"unknown excitation {tag!r}")
    label, kind = tag[len("charge("):-len(")_unit")].split(",")
    if label not in ("M", "P") or kind not in ("f", "s"):
        raise ValueError(f"unknown excitation {tag!r}")
    return label, kind


def solve_basis(spec: GeometrySpec, excitation, grid: GridSpec | None = None, map_spec: MapSpec | None = None,
                tol=1e-8, discretization: Discretization | None = None):
    """Solve one unit-excitation problem and return ``(PotentialMap, SolveReport)``."""
    disc = discretization or Discretization(spec, grid)
    u, report = disc.solve(excitation, tol=tol)
    return disc.to_map(u, excitation, map_spec), report


def solve_bases(spec: GeometrySpec, grid: GridSpec | None = None, map_spec: MapSpec | None = None, tol=1e-8,
                tags=None):
    """Solve every basis problem of ``spec`` reusing one multigrid hierarchy."""
    disc = Discretization(spec, grid)
    if tags is None:
        labels = {f.label for f in spec.fibers}
        tags = [t for t in ALL_TAGS if t in _GROUP_FOR_TAG or _parse_charge_tag(t)[0] in labels]
    maps, reports = {}, {}
    for tag in tags:
        maps[tag], reports[tag] = solve_basis(spec, tag, map_spec=map_spec, tol=tol, discretization=disc)
    return maps, reports


# ---------------------------------------------------------------------------
# free-space oracles


class NearSingularityError(ValueError):
    pass


def disk_on_axis(sigma, radius, z):
    """On-axis potential (V) of a uniformly charged disk in free space.

    ``sigma`` in e/um^2, ``radius`` and ``z`` in meters.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    s = sigma * E_PER_UM2
    return s / (2 * EPS0) * (np.sqrt(radius**2 + z**2) - np.abs(z))


def coulomb_surface_potential(surface, point, sigma=1.0, epsrel=1e-9, min_distance=None):
    """Free-space potential (V) of a uniformly charged surface at ``point``.

    ``surface`` is a :class:`~fibercharge.geometry.Disk` or
    :class:`~fibercharge.geometry.CylinderShell`; ``sigma`` in e/um^2.
    Adaptive Gauss-Kronrod quadrature over the surface parametrization.
    """
    from .geometry import CylinderShell, Disk, _perpendicular_pair

    p = np.asarray(point, dtype=float)
    if sigma == 0:
        return 0.0
    s = sigma * E_PER_UM2
    pref = s / (4 * np.pi * EPS0)
    if isinstance(surface, Disk):
        c = np.asarray(surface.center)
        u, v = _perpendicular_pair(surface.normal)
        n = np.asarray(surface.normal, float) / np.linalg.norm(surface.normal)
        rel = p - c
        h = rel @ n
        pu, pv = rel @ u, rel @ v
        rho = np.hypot(pu, pv)
        size = surface.radius
        dist = abs(h) if rho <= surface.radius else np.hypot(abs(h), rho - surface.radius)
        if dist < (min_distance if min_distance is not None else 1e-4 * size):
            raise NearSingularityError("evaluation point too close to the charged disk")

        def disk_integrand(r, phi):
            dx = pu - r * np.cos(phi)
            dy = pv - r * np.sin(phi)
            return r / np.sqrt(dx * dx + dy * dy + h * h)

        val, _ = integrate.dblquad(disk_integrand, 0, 2 * np.pi, 0, surface.radius,
                                   epsabs=0, epsrel=epsrel)
        return pref * val
    if isinstance(surface, CylinderShell):
        b = np.asarray(surface.base)
        a = np.asarray(surface.axis, float) / np.linalg.norm(surface.axis)
        u, v = _perpendicular_pair(a)
        rel = p - b
        t0 = rel @ a
        pu, pv = rel @ u, rel @ v
        rho = np.hypot(pu, pv)
        R = surface.radius
        dt = max(0.0, -t0, t0 - surface.length)
        dist = np.hypot(dt, rho - R)
        if dist < (min_distance if min_distance is not None else 1e-4 * R):
            raise NearSingularityError("evaluation point too close to the charged shell")

        def shell_integrand(t, phi):
            dx = pu - R * np.cos(phi)
            dy = pv - R * np.sin(phi)
            return R / np.sqrt(dx * dx + dy * dy + (t0 - t) ** 2)

        val, _ = integrate.dblquad(shell_integrand, 0, 2 * np.pi, 0, surface.length,
                                   epsabs=0, epsrel=epsrel)
        return pref * val
    raise TypeError(f"unsupported surface {type(surface).__name__}")
