"""Small test geometries that solve in seconds."""

from fibercharge.constants import MM, UM
from fibercharge.field_solver import GridSpec
from fibercharge.geometry import (
    AxialTube,
    Domain,
    Electrode,
    ElectrodeLayout,
    FiberPlacement,
    FiberSpec,
    GeometrySpec,
    RoundedBox,
    TrapConfig,
    make_fiber,
)


def small_spec(with_fiber=True):
    """A box electrode on rf, a grounded rod, one endcap tube and an optional fiber."""
    electrodes = (
        Electrode("rf_a", "rf", RoundedBox(center=(0.0, 0.0, 0.3 * MM), axes=((1, 0, 0), (0, 1, 0), (0, 0, 1)),
                                            half_extents=(0.4 * MM, 0.2 * MM, 0.15 * MM), rounding=60 * UM)),
        Electrode("gnd_a", "ground", AxialTube(-0.5 * MM, 0.5 * MM, 0.0, 0.12 * MM, y0=0.0, z0=-0.35 * MM)),
        Electrode("ec_left", "ec_left", AxialTube(-0.9 * MM, -0.5 * MM, 0.1 * MM, 0.2 * MM)),
    )
    fibers = ()
    if with_fiber:
        fs = FiberSpec("P", 200 * UM, length=0.5 * MM)
        fibers = (make_fiber(fs, FiberPlacement(0.3 * MM, side="below")),)
    return GeometrySpec(TrapConfig(), ElectrodeLayout(), Domain(1 * MM, 1 * MM, 1 * MM), electrodes, fibers)


def uniform_grid(spacing=100 * UM, refinements=0):
    return GridSpec(core_half=(0.9 * MM,) * 3, core_spacing=spacing, growth=1.0, max_spacing=spacing,
                    refinements=refinements, mid_half=(0.0, 0.0, 0.0))
