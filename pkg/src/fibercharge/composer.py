"""Total potential energy from unit-excitation basis maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import ELEMENTARY_CHARGE, SIGMA0, UM
from .field_solver import EC_LEFT, EC_RIGHT, RF, PotentialMap, StaleBasisError, charge_tag, grid_gradient
from .geometry import ChargeState, TrapConfig


@dataclass
class EnergyMap:
    """Potential energy (J) on the xy grid of the basis maps."""

    x: np.ndarray
    y: np.ndarray
    values: np.ndarray
    geometry_hash: str = ""

    @property
    def ev(self):
        return self.values / ELEMENTARY_CHARGE

    @property
    def spacing(self):
        return float(self.x[1] - self.x[0]), float(self.y[1] - self.y[0])

    def __add__(self, other):
        if isinstance(other, EnergyMap):
            if self.values.shape != other.values.shape:
                raise StaleBasisError("energy maps live on different grids")
            other = other.values
        return EnergyMap(self.x, self.y, self.values + other, self.geometry_hash)

    def shifted(self, constant):
        return EnergyMap(self.x, self.y, self.values + constant, self.geometry_hash)

    def window(self, y_half):
        """Restrict to |y - 0| <= y_half (keeps the fiber bodies out of minimum searches)."""
        keep = np.abs(self.y) <= y_half + 1e-12
        return EnergyMap(self.x, self.y[keep], self.values[:, keep], self.geometry_hash)

    def to_csv(self, path, unit="eV"):
        scale = {"eV": 1 / ELEMENTARY_CHARGE, "J": 1.0}[unit]
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        table = np.column_stack([X.ravel() / UM, Y.ravel() / UM, self.values.ravel() * scale])
        np.savetxt(path, table, delimiter=",", header=f"x_um,y_um,Phi_{unit}", comments="", fmt="%.10g")


@dataclass(frozen=True)
class EndcapVoltages:
    left: float
    right: float

    @classmethod
    def from_mean_difference(cls, mean, difference=0.0):
        return cls(mean + 0.5 * difference, mean - 0.5 * difference)

    @classmethod
    def from_trap(cls, trap: TrapConfig):
        return cls(trap.endcap_left, trap.endcap_right)

    @property
    def mean(self):
        return 0.5 * (self.left + self.right)

    @property
    def difference(self):
        return self.left - self.right


def pseudopotential(u_rf: PotentialMap, trap: TrapConfig) -> EnergyMap:
    """Ponderomotive energy Q^2 V_rf^2 / (4 M Omega^2 V0^2) |grad U_rf|^2.

    The in-plane gradient comes from the map; the out-of-plane component is
    included when the map carries ``dz``.
    """
    if u_rf.tag != RF:
        raise ValueError(f"pseudopotential needs an {RF} map, got {u_rf.tag!r}")
    gx, gy = grid_gradient(u_rf)
    g2 = gx**2 + gy**2
    if u_rf.dz is not None:
        g2 = g2 + u_rf.dz**2
    Q, M, W = trap.ion_charge, trap.ion_mass, trap.rf_angular_frequency
    coef = Q**2 / (4 * M * W**2) * (trap.rf_amplitude / trap.reference_voltage) ** 2
    return EnergyMap(u_rf.x, u_rf.y, coef * g2, u_rf.geometry_hash)


def _check_bases(bases):
    maps = list(bases.values())
    ref = maps[0]
    for m in maps[1:]:
        if m.geometry_hash != ref.geometry_hash:
            raise StaleBasisError(f"basis {m.tag} has geometry hash {m.geometry_hash}, expected {ref.geometry_hash}")
        if not m.same_grid(ref):
            raise StaleBasisError(f"basis {m.tag} is on a different grid")
    return ref


def patch_energy(patch, x, trap: TrapConfig):
    """Q * U_patch(x) broadcast over y (shape (len(x), 1))."""
    if patch is None:
        return 0.0
    return (trap.ion_charge * np.asarray(patch(x)))[:, None]


def endcap_energy(bases, ec: EndcapVoltages, trap: TrapConfig):
    Q, V0 = trap.ion_charge, trap.reference_voltage
    s = trap.endcap_voltage_scale
    return Q * s * (ec.left / V0 * bases[EC_LEFT].values + ec.right / V0 * bases[EC_RIGHT].values)


def charge_energy(bases, charges: ChargeState, trap: TrapConfig):
    total = 0.0
    for label, kind, sigma in charges.items():
        if sigma == 0:
            continue
        tag = charge_tag(label, kind)
        if tag not in bases:
            raise KeyError(f"missing basis {tag} for non-zero density")
        total = total + trap.ion_charge * (sigma / SIGMA0) * bases[tag].values
    return total


def compose_total(bases, ec: EndcapVoltages, charges: ChargeState, trap: TrapConfig, patch=None) -> EnergyMap:
    """Superpose pseudopotential, endcap, fiber-charge and patch energies."""
    ref = _check_bases(bases)
    phi = pseudopotential(bases[RF], trap).values
    phi = phi + endcap_energy(bases, ec, trap)
    phi = phi + charge_energy(bases, charges, trap)
    phi = phi + patch_energy(patch, ref.x, trap)
    return EnergyMap(ref.x, ref.y, np.asarray(phi) * np.ones_like(ref.values), ref.geometry_hash)
