"""Trap, fiber and domain description.

Everything here is in SI units. Electrodes and fiber bodies are described by
signed distance functions (negative inside) so the field solver can locate
boundaries between grid nodes.

Coordinate convention: trap center at the origin, trap axis along x, fibers
along y (fiber M above, y > 0; fiber P below, y < 0).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .constants import CA40_MASS, ELEMENTARY_CHARGE, MHZ, MM, UM, V0


class GeometryError(ValueError):
    """Raised for invalid or conflicting geometry (overlapping bodies)."""


@dataclass(frozen=True)
class TrapConfig:
    ion_electrode_distance: float = 270 * UM
    endcap_separation: float = 5.1 * MM
    blade_scale: float = 1.0
    rf_amplitude: float = 111.0
    rf_angular_frequency: float = 2 * np.pi * 30.25 * MHZ
    reference_voltage: float = V0
    endcap_left: float = 1300.0
    endcap_right: float = 1300.0
    ion_charge: float = ELEMENTARY_CHARGE
    ion_mass: float = CA40_MASS
    endcap_voltage_scale: float = 1.0

    def __post_init__(self):
        if self.ion_electrode_distance <= 0 or self.endcap_separation <= 0:
            raise GeometryError("trap lengths must be positive")
        if self.blade_scale <= 0:
            raise GeometryError("blade_scale must be positive")
        if self.rf_angular_frequency <= 0:
            raise GeometryError("rf angular frequency must be positive")
        if self.ion_mass <= 0:
            raise GeometryError("ion mass must be positive")
        if self.reference_voltage != V0:
            raise GeometryError("reference voltage is fixed at 1 V")

    @property
    def endcap_mean(self):
        return 0.5 * (self.endcap_left + self.endcap_right)

    @property
    def endcap_difference(self):
        return self.endcap_left - self.endcap_right

    def with_endcaps(self, mean, difference=0.0):
        """Return a copy biased with the given mean and difference voltages."""
        return replace(
            self,
            endcap_left=mean + 0.5 * difference,
            endcap_right=mean - 0.5 * difference,
        )


@dataclass(frozen=True)
class ElectrodeLayout:
    """Simplified electrode primitives.

    Blades are rounded rectangular prisms on the diagonals of the yz plane,
    endcaps are hollow cylinders on the trap axis and the compensation
    electrodes are grounded rods parallel to the axis.
    """

    blade_depth: float = 1.2 * MM
    blade_thickness: float = 120 * UM
    blade_half_length: float = 2.4 * MM
    blade_rounding: float = 40 * UM
    endcap_inner_radius: float = 0.15 * MM
    endcap_outer_radius: float = 0.35 * MM
    endcap_length: float = 3.0 * MM
    comp_rod_radius: float = 150 * UM
    comp_rod_distance: float = 1.9 * MM
    comp_rod_half_length: float = 1.5 * MM


@dataclass(frozen=True)
class FiberSpec:
    label: str
    cladding_diameter: float
    length: float = 6 * MM
    relative_permittivity: float = 3.8

    def __post_init__(self):
        if self.label not in ("M", "P"):
            raise GeometryError(f"unknown fiber label {self.label!r}")
        if not self.cladding_diameter > 0:
            raise GeometryError("cladding diameter must be positive")
        if not self.length > 0:
            raise GeometryError("fiber length must be positive")
        if self.relative_permittivity < 1:
            raise GeometryError("relative permittivity must be >= 1")

    @property
    def radius(self):
        return 0.5 * self.cladding_diameter


FIBER_M = FiberSpec("M", 220 * UM)
FIBER_P = FiberSpec("P", 230 * UM)

OFFSET_ENVELOPE = 20 * UM


@dataclass(frozen=True)
class FiberPlacement:
    d: float
    x_offset: float = 0.0
    z_offset: float = 0.0
    side: str = "above"

    def __post_init__(self):
        if self.side not in ("above", "below"):
            raise GeometryError(f"side must be 'above' or 'below', got {self.side!r}")
        tol = 1e-12
        if abs(self.x_offset) > OFFSET_ENVELOPE + tol or abs(self.z_offset) > OFFSET_ENVELOPE + tol:
            raise GeometryError("fiber offsets must stay within +/-20 um")
        if not self.d > 0:
            raise GeometryError("fiber distance must be positive")

    @property
    def sign(self):
        return 1.0 if self.side == "above" else -1.0


@dataclass(frozen=True)
class ChargeState:
    """Homogeneous surface charge densities in e/um^2."""

    M_f: float = 0.0
    M_s: float = 0.0
    P_f: float = 0.0
    P_s: float = 0.0

    def __post_init__(self):
        for v in (self.M_f, self.M_s, self.P_f, self.P_s):
            if not np.isfinite(v):
                raise ValueError("charge densities must be finite")

    def get(self, label, kind):
        return getattr(self, f"{label}_{kind}")

    def with_fiber(self, label, facet, side):
        return replace(self, **{f"{label}_f": facet, f"{label}_s": side})

    def items(self):
        for label in ("M", "P"):
            for kind in ("f", "s"):
                yield label, kind, self.get(label, kind)


@dataclass(frozen=True)
class Domain:
    """Grounded box enclosing the trap, half sizes along x, y, z."""

    half_x: float = 12 * MM
    half_y: float = 12 * MM
    half_z: float = 12 * MM

    def scaled(self, factor):
        return Domain(self.half_x * factor, self.half_y * factor, self.half_z * factor)


# ---------------------------------------------------------------------------
# primitives


def _norm(*components):
    return np.sqrt(sum(c * c for c in components))


def _box2d_sdf(a, b, half_a, half_b):
    da = np.abs(a) - half_a
    db = np.abs(b) - half_b
    outside = _norm(np.maximum(da, 0.0), np.maximum(db, 0.0))
    inside = np.minimum(np.maximum(da, db), 0.0)
    return outside + inside


@dataclass(frozen=True)
class RoundedBox:
    center: tuple
    axes: tuple  # three orthonormal row vectors
    half_extents: tuple
    rounding: float = 0.0

    def sdf(self, x, y, z):
        c = self.center
        px, py, pz = x - c[0], y - c[1], z - c[2]
        r = self.rounding
        d = []
        for ax, h in zip(self.axes, self.half_extents):
            q = px * ax[0] + py * ax[1] + pz * ax[2]
            d.append(np.abs(q) - (h - r))
        outside = _norm(*(np.maximum(di, 0.0) for di in d))
        inside = np.minimum(np.maximum(np.maximum(d[0], d[1]), d[2]), 0.0)
        return outside + inside - r


@dataclass(frozen=True)
class AxialTube:
    """Annular cylinder coaxial with the trap axis, x in [x0, x1]."""

    x0: float
    x1: float
    r_in: float
    r_out: float
    y0: float = 0.0
    z0: float = 0.0

    def sdf(self, x, y, z):
        rho = _norm(y - self.y0, z - self.z0)
        rc = 0.5 * (self.r_in + self.r_out)
        xc = 0.5 * (self.x0 + self.x1)
        return _box2d_sdf(rho - rc, x - xc, 0.5 * (self.r_out - self.r_in), 0.5 * (self.x1 - self.x0))


@dataclass(frozen=True)
class Disk:
    center: tuple
    normal: tuple
    radius: float

    @property
    def area(self):
        return np.pi * self.radius**2

    def reflected_x(self):
        c, n = self.center, self.normal
        return Disk((-c[0], c[1], c[2]), (-n[0], n[1], n[2]), self.radius)

    def quadrature(self, spacing):
        """Point cloud with area weights (midpoint rule on a polar grid)."""
        nr = max(int(np.ceil(self.radius / spacing)), 4)
        edges = np.linspace(0.0, self.radius, nr + 1)
        pts, wts = [], []
        u, v = _perpendicular_pair(self.normal)
        for r0, r1 in zip(edges[:-1], edges[1:]):
            rm = 0.5 * (r0 + r1)
            nphi = max(int(np.ceil(2 * np.pi * rm / spacing)), 8)
            phi = (np.arange(nphi) + 0.5) * 2 * np.pi / nphi
            ring_area = np.pi * (r1**2 - r0**2)
            off = rm * (np.outer(np.cos(phi), u) + np.outer(np.sin(phi), v))
            pts.append(np.asarray(self.center) + off)
            wts.append(np.full(nphi, ring_area / nphi))
        return np.concatenate(pts), np.concatenate(wts)


@dataclass(frozen=True)
class CylinderShell:
    """Lateral surface of a cylinder starting at ``base`` along unit ``axis``."""

    base: tuple
    axis: tuple
    radius: float
    length: float

    @property
    def area(self):
        return 2 * np.pi * self.radius * self.length

    def reflected_x(self):
        b, a = self.base, self.axis
        return CylinderShell((-b[0], b[1], b[2]), (-a[0], a[1], a[2]), self.radius, self.length)

    def quadrature(self, spacing, along=None):
        """Point cloud with area weights.

        ``along`` optionally gives the axial sample edges (distances from the
        base); otherwise a uniform subdivision at ``spacing`` is used.
        """
        if along is None:
            n = max(int(np.ceil(self.length / spacing)), 1)
            along = np.linspace(0.0, self.length, n + 1)
        along = np.asarray(along)
        nphi = max(int(np.ceil(2 * np.pi * self.radius / spacing)), 16)
        phi = (np.arange(nphi) + 0.5) * 2 * np.pi / nphi
        u, v = _perpendicular_pair(self.axis)
        ring = self.radius * (np.outer(np.cos(phi), u) + np.outer(np.sin(phi), v))
        tm = 0.5 * (along[1:] + along[:-1])
        dt = np.diff(along)
        pts = np.asarray(self.base)[None, None, :] + tm[:, None, None] * np.asarray(self.axis) + ring[None]
        wts = np.repeat(dt * 2 * np.pi * self.radius / nphi, nphi)
        return pts.reshape(-1, 3), wts


def _perpendicular_pair(n):
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    trial = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    u = np.cross(n, trial)
    u /= np.linalg.norm(u)
    return u, np.cross(n, u)


@dataclass(frozen=True)
class FiberCylinder:
    """Solid fiber body along y starting at the facet."""

    x0: float
    z0: float
    y_facet: float
    direction: float  # +1 extends towards +y, -1 towards -y
    radius: float
    length: float

    def sdf(self, x, y, z):
        rho = _norm(x - self.x0, z - self.z0)
        yc = self.y_facet + 0.5 * self.direction * self.length
        return _box2d_sdf(rho - 0.5 * self.radius, y - yc, 0.5 * self.radius, 0.5 * self.length)


# ---------------------------------------------------------------------------
# assembled description

ELECTRODE_GROUPS = ("rf", "ground", "ec_left", "ec_right")


@dataclass(frozen=True)
class Electrode:
    name: str
    group: str
    shape: object

    def sdf(self, x, y, z):
        return self.shape.sdf(x, y, z)


@dataclass(frozen=True)
class FiberBody:
    spec: FiberSpec
    placement: FiberPlacement
    body: FiberCylinder
    facet: Disk
    side: CylinderShell

    @property
    def label(self):
        return self.spec.label


@dataclass(frozen=True)
class GeometrySpec:
    trap: TrapConfig
    layout: ElectrodeLayout
    domain: Domain
    electrodes: tuple
    fibers: tuple = field(default_factory=tuple)

    def fiber(self, label):
        for f in self.fibers:
            if f.label == label:
                return f
        raise KeyError(f"no fiber labelled {label!r} in geometry")

    def fiber_surfaces(self, label):
        f = self.fiber(label)
        return f.facet, f.side

    def surface(self, label, kind):
        facet, side = self.fiber_surfaces(label)
        return {"f": facet, "s": side}[kind]

    def hash(self):
        # endcap voltages/drive amplitude do not change basis solutions
        trap = asdict(self.trap)
        for k in ("rf_amplitude", "rf_angular_frequency", "endcap_left", "endcap_right",
                  "ion_charge", "ion_mass", "endcap_voltage_scale"):
            trap.pop(k)
        payload = {
            "trap": trap,
            "layout": asdict(self.layout),
            "domain": asdict(self.domain),
            "electrodes": [asdict(e) for e in self.electrodes],
            "fibers": [
                {"spec": asdict(f.spec), "placement": asdict(f.placement)} for f in self.fibers
            ],
        }
        return hashlib.sha256(canonical_json(payload).encode()).hexdigest()[:16]


def _canonical(obj):
    # 12 significant digits: 20 * UM and 20e-6 must hash alike
    if isinstance(obj, (float, np.floating)):
        return float(f"{float(obj):.12g}") + 0.0
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def canonical_json(payload):
    """Deterministic JSON with floats rounded to 12 significant digits."""
    return json.dumps(_canonical(payload), sort_keys=True)


def _blade(name, group, angle, r_tip, layout):
    c, s = np.cos(angle), np.sin(angle)
    radial = (0.0, c, s)
    tangential = (0.0, -s, c)
    rc = r_tip + 0.5 * layout.blade_depth
    return Electrode(
        name,
        group,
        RoundedBox(
            center=(0.0, rc * c, rc * s),
            axes=((1.0, 0.0, 0.0), radial, tangential),
            half_extents=(layout.blade_half_length, 0.5 * layout.blade_depth, 0.5 * layout.blade_thickness),
            rounding=layout.blade_rounding,
        ),
    )


def build_electrodes(trap: TrapConfig, layout: ElectrodeLayout):
    r_tip = trap.ion_electrode_distance * trap.blade_scale
    quarter = np.pi / 4
    electrodes = [
        _blade("rf_a", "rf", quarter, r_tip, layout),
        _blade("rf_b", "rf", 5 * quarter, r_tip, layout),
        _blade("gnd_a", "ground", 3 * quarter, r_tip, layout),
        _blade("gnd_b", "ground", 7 * quarter, r_tip, layout),
    ]
    x_in = 0.5 * trap.endcap_separation
    for name, sign in (("ec_left", -1.0), ("ec_right", 1.0)):
        lo, hi = sorted((sign * x_in, sign * (x_in + layout.endcap_length)))
        electrodes.append(
            Electrode(name, name, AxialTube(lo, hi, layout.endcap_inner_radius, layout.endcap_outer_radius))
        )
    # compensation rods sit behind the grounded blades, keeping the y <-> z mirror symmetry
    for name, angle in (("comp_a", 3 * quarter), ("comp_b", 7 * quarter)):
        rc = layout.comp_rod_distance
        electrodes.append(
            Electrode(
                name,
                "ground",
                AxialTube(
                    -layout.comp_rod_half_length,
                    layout.comp_rod_half_length,
                    0.0,
                    layout.comp_rod_radius,
                    y0=rc * np.cos(angle),
                    z0=rc * np.sin(angle),
                ),
            )
        )
    return tuple(electrodes)


def make_fiber(spec: FiberSpec, placement: FiberPlacement) -> FiberBody:
    s = placement.sign
    y_facet = s * placement.d
    body = FiberCylinder(placement.x_offset, placement.z_offset, y_facet, s, spec.radius, spec.length)
    facet = Disk((placement.x_offset, y_facet, placement.z_offset), (0.0, -s, 0.0), spec.radius)
    side = CylinderShell((placement.x_offset, y_facet, placement.z_offset), (0.0, s, 0.0), spec.radius, spec.length)
    return FiberBody(spec, placement, body, facet, side)


def check_clearance(electrodes, fiber: FiberBody, spacing=5 * UM):
    """Raise GeometryError if the fiber body intersects an electrode."""
    pts, _ = fiber.side.quadrature(spacing)
    fpts, _ = fiber.facet.quadrature(spacing)
    pts = np.concatenate([pts, fpts])
    for el in electrodes:
        dist = el.sdf(pts[:, 0], pts[:, 1], pts[:, 2])
        if np.any(dist <= 0):
            raise GeometryError(
                f"fiber {fiber.label} at d = {fiber.placement.d / UM:.1f} um overlaps electrode {el.name}"
            )


def build_geometry(trap: TrapConfig, fibers, layout: ElectrodeLayout | None = None,
                   domain: Domain | None = None) -> GeometrySpec:
    """Assemble electrodes and fiber bodies.

    ``fibers`` is a sequence of ``(FiberSpec, FiberPlacement)`` pairs.
    """
    layout = layout or ElectrodeLayout()
    domain = domain or Domain()
    electrodes = build_electrodes(trap, layout)
    bodies = []
    sides = set()
    for spec, placement in fibers:
        if spec.label in {b.label for b in bodies}:
            raise GeometryError(f"fiber {spec.label} listed twice")
        if placement.side in sides:
            raise GeometryError("fibers must sit on opposite sides of the trap axis")
        if placement.d <= spec.radius:
            raise GeometryError("fiber facet must be farther than one cladding radius from the center")
        sides.add(placement.side)
        body = make_fiber(spec, placement)
        check_clearance(electrodes, body)
        bodies.append(body)
    return GeometrySpec(trap, layout, domain, electrodes, tuple(bodies))


def fiber_surfaces(spec: GeometrySpec, label):
    """Return ``(facet_disk, side_shell)`` for the named fiber."""
    return spec.fiber_surfaces(label)


def default_fibers(d_M=2.0 * MM, d_P=1.6 * MM, x_M=0.0, x_P=0.0):
    return [
        (FIBER_M, FiberPlacement(d_M, x_offset=x_M, side="above")),
        (FIBER_P, FiberPlacement(d_P, x_offset=x_P, side="below")),
    ]
