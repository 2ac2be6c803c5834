import json

import numpy as np
import pytest

from fibercharge import cli
from fibercharge.cache import BasisCache
from fibercharge.config import load_config
from fibercharge.constants import UM
from fibercharge.field_solver import SolverError
from fibercharge.synthdata import AxialTrapModel, cubic_patch, synthetic_axial_scan

COARSE_YAML = """\
grid:
  core_spacing_um: 20
scan:
  d_um: [1600, 1000]
inference:
  sigma_f_range: [2, 6]
  sigma_s_range: [6, 10]
  step: 1.0
"""


@pytest.fixture
def coarse_config(tmp_path):
    p = tmp_path / "coarse.yaml"
    p.write_text(COARSE_YAML)
    return p


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["no-such-command"])
    assert exc.value.code == 2


def test_fit_axial_law_from_csv(tmp_path, capsys):
    v = np.array([800.0, 1000, 1300, 1500, 1800])
    f = np.sqrt(2.3e9 * v + (2 * np.pi * 20e3) ** 2) / (2 * np.pi * 1e3)
    p = tmp_path / "law.csv"
    p.write_text("V_ecM_V,f_kHz\n" + "".join(f"{a},{float(b)!r}\n" for a, b in zip(v, f)))
    assert cli.main(["fit-axial-law", "--input", str(p), "--out", str(tmp_path / "o")]) == 0
    out = json.loads((tmp_path / "o" / "axial_law.json").read_text())
    assert out["fit"]["alpha_kHz2_per_mV"] == pytest.approx(2.3, rel=1e-9)
    assert out["manifest"]["command"] == "fit-axial-law"


def test_calibrate_with_given_alphas(tmp_path):
    assert cli.main(["calibrate", "--alpha-exp", "2.3", "--alpha-sim", "1.6", "--out", str(tmp_path)]) == 0
    out = json.loads((tmp_path / "calibration.json").read_text())
    assert out["endcap_voltage_scale"] == pytest.approx(1.4375)


def test_reconstruct_patch(tmp_path):
    trap = AxialTrapModel()
    trap = AxialTrapModel(tilt_per_volt=0.45e-3 * trap.k_v / 100)
    scan = synthetic_axial_scan(trap, cubic_patch(2e-3, 400 * UM), np.linspace(-100, 100, 21))
    scan.to_csv(tmp_path / "scan.csv")
    code = cli.main(["reconstruct-patch", "--scan", str(tmp_path / "scan.csv"), "--out", str(tmp_path / "o")])
    assert code == 0
    report = json.loads((tmp_path / "o" / "patch_report.json").read_text())
    assert abs(report["anchor_um"]) < 25
    table = np.loadtxt(tmp_path / "o" / "patch.csv", delimiter=",", skiprows=1)
    assert table.shape[1] == 3


def test_schema_error_exits_3(tmp_path, capsys):
    (tmp_path / "scan.csv").write_text("V_ecD_V,x_exp_um\n1,2\n")
    assert cli.main(["reconstruct-patch", "--scan", str(tmp_path / "scan.csv"), "--out", str(tmp_path)]) == 3
    assert "line 1" in capsys.readouterr().err
    (tmp_path / "bad.yaml").write_text("nonsense_key: 1\n")
    assert cli.main(["calibrate", "--alpha-sim", "1", "--config", str(tmp_path / "bad.yaml"),
                     "--out", str(tmp_path)]) == 3


def test_non_monotonic_scan_exits_3(tmp_path):
    rows = ["V_ecD_V,x_exp_um,x_err_um,f_exp_kHz,f_err_kHz,x_sim_um,f_sim_kHz",
            "-1,0,1,150,2,0,150", "0,5,1,150,2,0,150", "1,3,1,150,2,0,150"]
    (tmp_path / "scan.csv").write_text("\n".join(rows) + "\n")
    assert cli.main(["reconstruct-patch", "--scan", str(tmp_path / "scan.csv"), "--out", str(tmp_path)]) == 3


def test_geometry_error_exits_7(tmp_path):
    (tmp_path / "g.yaml").write_text("fibers:\n  P:\n    d_um: 50\nscan:\n  d_um: [50]\n")
    code = cli.main(["solve-basis", "--config", str(tmp_path / "g.yaml"), "--out", str(tmp_path),
                     "--cache-dir", str(tmp_path / "cache")])
    assert code == 7


def test_stale_basis_exits_6(tmp_path, coarse_config):
    cfg = load_config(coarse_config)
    cache = BasisCache(tmp_path / "cache", cfg.grid, cfg.map_spec, cfg.tolerance)
    spec = cfg.geometry(d=cfg.scan.d_values[0])
    cache.directory.mkdir()
    cache.path(spec, "rf_unit").write_bytes(b"garbage")
    code = cli.main(["solve-basis", "--config", str(coarse_config), "--out", str(tmp_path),
                     "--cache-dir", str(cache.directory)])
    assert code == 6


def test_solver_failure_exits_4(tmp_path, coarse_config, monkeypatch):
    class Failing:
        def __init__(self, *a, **k):
            raise SolverError("did not converge", [1.0, 0.5])

    monkeypatch.setattr("fibercharge.cache.Discretization", Failing)
    code = cli.main(["solve-basis", "--config", str(coarse_config), "--out", str(tmp_path),
                     "--cache-dir", str(tmp_path / "cache")])
    assert code == 4


def test_synth_and_infer(tmp_path, coarse_config):
    assert cli.main(["synth", "--config", str(coarse_config), "--out", str(tmp_path / "s"), "--seed", "1"]) == 0
    truth = json.loads((tmp_path / "s" / "truth.json").read_text())["truth"]
    assert truth["seed"] == 1
    code = cli.main(["infer-charges", "--config", str(coarse_config), "--dataset", str(tmp_path / "s" / "dataset.csv"),
                     "--out", str(tmp_path / "i")])
    assert code == 0
    result = json.loads((tmp_path / "i" / "result.json").read_text())["result"]
    assert np.isfinite(result["sigma_f_e_per_um2"])
    assert (tmp_path / "i" / "residual_surface.csv").exists()


def test_all_transition_dataset_exits_5(tmp_path, coarse_config):
    rows = ["d_um,d_err_um,x_um,x_err_um,f_kHz,f_err_kHz,kind",
            "1600,13,nan,0.8,nan,2,transition", "1000,13,nan,0.8,nan,2,transition"]
    (tmp_path / "d.csv").write_text("\n".join(rows) + "\n")
    code = cli.main(["infer-charges", "--config", str(coarse_config), "--dataset", str(tmp_path / "d.csv"),
                     "--out", str(tmp_path)])
    assert code == 5
