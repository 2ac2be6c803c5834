"""Physical constants and unit helpers (SI internally)."""

from scipy.constants import atomic_mass, e, epsilon_0, pi

ELEMENTARY_CHARGE = e
EPS0 = epsilon_0
CA40_MASS = 39.962590863 * atomic_mass - 9.1093837015e-31

UM = 1e-6
MM = 1e-3
KHZ = 1e3
MHZ = 1e6

# 1 e/um^2 expressed in C/m^2
E_PER_UM2 = ELEMENTARY_CHARGE / UM**2

SIGMA0 = 1.0  # reference density, e/um^2
V0 = 1.0  # unit excitation voltage, V


def two_pi_khz(f_khz):
    """Convert a frequency in kHz to angular frequency in rad/s."""
    return 2 * pi * f_khz * KHZ


def to_khz(omega):
    """Convert angular frequency (rad/s) to f = omega / 2pi in kHz."""
    return omega / (2 * pi * KHZ)
