import numpy as np
import pytest

from fibercharge.config import ConfigError, RunConfig, load_config, parse_config
from fibercharge.constants import UM


def test_defaults():
    cfg = load_config(None)
    assert cfg == RunConfig()
    assert cfg.scan.endcap_mean == 1500.0
    assert cfg.fiber("P")[1].x_offset == 10 * UM
    assert cfg.trap.rf_angular_frequency == pytest.approx(2 * np.pi * 30.25e6)


def test_units_converted():
    cfg = parse_config({
        "trap": {"rf_amplitude_V": 100, "rf_frequency_Hz": 20e6, "endcap_voltage_scale": 1.5},
        "fibers": {"P": {"d_um": 900, "x_offset_um": -5}},
        "grid": {"core_spacing_um": 20, "core_half_um": [300, 100, 50]},
        "scan": {"d_um": [1600, 800], "endcap_mean_V": 1300, "charges": {"M_f": 1.0}},
        "inference": {"errors": {"recon_frequency_kHz": 3.0, "recon_position": None}, "x_offsets_um": [0, 10]},
        "synth": {"noise": {"seed": 7}},
    })
    assert cfg.trap.rf_angular_frequency == pytest.approx(2 * np.pi * 20e6)
    assert cfg.trap.endcap_voltage_scale == 1.5
    assert cfg.fiber("P")[1].d == pytest.approx(900 * UM)
    assert cfg.grid.core_spacing == pytest.approx(20 * UM)
    assert cfg.grid.core_half[2] == pytest.approx(50 * UM)
    assert cfg.scan.d_values == pytest.approx((1600 * UM, 800 * UM))
    assert cfg.scan.charges.M_f == 1.0
    assert cfg.inference.budget.recon_position is None
    assert cfg.inference.budget.recon_frequency == pytest.approx(2 * np.pi * 3e3)
    assert cfg.inference.x_offsets == pytest.approx((0.0, 10 * UM))
    assert cfg.synth.noise.seed == 7


@pytest.mark.parametrize("raw", [
    {"bogus": 1},
    {"trap": {"voltage": 1}},
    {"trap": {"rf_amplitude_V": "abc"}},
    {"scan": {"charges": {"X_f": 1}}},
    {"trap": []},
    [1, 2],
])
def test_bad_configs(raw):
    with pytest.raises(ConfigError):
        parse_config(raw)


def test_yaml_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("scan:\n  d_um: [1600, 1000]\nsolver:\n  tolerance: 1.0e-9\n")
    cfg = load_config(p)
    assert cfg.tolerance == 1e-9
    p.write_text("scan: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_geometry_moves_scanned_fiber():
    cfg = RunConfig()
    spec = cfg.geometry(d=900 * UM, x_offset=0.0)
    p = spec.fiber("P")
    assert p.placement.d == pytest.approx(900 * UM) and p.placement.x_offset == 0.0
    assert spec.fiber("M").placement.d == pytest.approx(2000 * UM)
    assert cfg.geometry().hash() != spec.hash()
