import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fibercharge.constants import UM
from fibercharge.patch import (
    AxialScan,
    ChangeOfVariablesError,
    PatchError,
    PatchPotential,
    PositionErrorProfile,
    SchemaError,
    _cumtrapz_from,
    find_anchor,
    mean_patch,
    position_dependent_error,
    reconstruct_from_frequencies,
    reconstruct_from_positions,
    zero_patch,
)
from fibercharge.synthdata import AxialTrapModel, cubic_patch, synthetic_axial_scan, zero_endcap_equilibrium

TRAP = AxialTrapModel()
TRAP = AxialTrapModel(tilt_per_volt=0.45e-3 * TRAP.k_v / 100)
V = np.linspace(-100, 100, 41)
RF_CURV = 0.1 * TRAP.k_v


def _rel_rms(patch, truth, x_anchor):
    xs = patch.x
    t = truth(xs) - truth(x_anchor)
    r = patch(xs) - patch(x_anchor)
    return np.sqrt(np.mean((r - t) ** 2)) / np.sqrt(np.mean(t**2))


def _scan(truth, **kw):
    return synthetic_axial_scan(TRAP, truth, V, **kw)


def _both(scan, truth):
    pos = reconstruct_from_positions(scan)
    x0 = zero_endcap_equilibrium(truth, rf_curvature=RF_CURV)
    freq = reconstruct_from_frequencies(scan, x0, RF_CURV * x0, anchor=pos.x_anchor)
    return pos, freq


def test_no_patch_gives_zero():
    scan = _scan(zero_patch(1e-3))
    pos, freq = _both(scan, zero_patch(1e-3))
    assert np.allclose(pos.values, 0, atol=1e-12)
    assert np.allclose(freq.values, 0, atol=1e-12)


@pytest.mark.parametrize("shift", [0.0, 40 * UM])
def test_cubic_round_trip(shift):
    truth = cubic_patch(2e-3, 400 * UM, x_shift=shift)
    pos, freq = _both(_scan(truth), truth)
    assert _rel_rms(pos, truth, pos.x_anchor) < 0.02
    assert _rel_rms(freq, truth, freq.x_anchor) < 0.02


def test_anchor_is_zero_discrepancy_point():
    truth = cubic_patch(2e-3, 400 * UM, x_shift=30 * UM)
    scan = _scan(truth)
    a = find_anchor(scan)
    # the cubic's force only touches zero at the inflection point, so the nearest sample is used
    assert a == pytest.approx(30 * UM, abs=np.diff(np.sort(scan.x_exp)).max())
    assert a in scan.x_exp
    assert reconstruct_from_positions(scan)(a) == pytest.approx(0.0, abs=1e-12)


def test_find_anchor_without_sign_change():
    n = 5
    scan = AxialScan(np.arange(n), np.arange(n) * 1e-5, np.ones(n) * 1e-6, np.ones(n), np.ones(n),
                     np.arange(n) * 1e-5 - np.array([3, 2, 1, 2, 3]) * 1e-7, np.ones(n))
    assert find_anchor(scan) == pytest.approx(2e-5)


def test_uncertainty_grows_outward():
    truth = cubic_patch(2e-3, 400 * UM)
    pos, freq = _both(_scan(truth), truth)
    for p in (pos, freq, mean_patch(pos, freq)):
        i0 = int(np.searchsorted(p.x, p.x_anchor))
        assert np.all(np.diff(p.uncertainty[i0:]) >= 0)
        assert np.all(np.diff(p.uncertainty[:i0 + 1]) <= 0)


def test_mean_patch_and_mismatch():
    truth = cubic_patch(2e-3, 400 * UM)
    pos, freq = _both(_scan(truth), truth)
    m = mean_patch(pos, freq)
    assert np.allclose(m.values, 0.5 * (pos(m.x) + freq(m.x)))
    with pytest.raises(PatchError):
        mean_patch(pos, PatchPotential(pos.x, pos.values, pos.uncertainty, pos.x_anchor + 1e-6))


def test_cumtrapz_exact_for_linear():
    x = np.linspace(-1, 2, 13)
    out = _cumtrapz_from(x, 2 * x, 4)
    assert np.allclose(out, x**2 - x[4] ** 2)


def test_non_monotonic_positions_rejected():
    n = 4
    with pytest.raises(ChangeOfVariablesError):
        AxialScan(np.arange(n), [0.0, 2e-6, 1e-6, 3e-6], np.ones(n), np.ones(n), np.ones(n), np.zeros(n),
                  np.ones(n))


def test_scan_validation():
    n = 3
    ok = dict(v_diff=np.arange(n), x_exp=np.arange(n) * 1e-6, x_err=np.ones(n), omega_exp=np.ones(n),
              omega_err=np.ones(n), x_sim=np.zeros(n), omega_sim=np.ones(n))
    AxialScan(**ok)
    with pytest.raises(PatchError):
        AxialScan(**{**ok, "x_err": -np.ones(n)})
    with pytest.raises(PatchError):
        AxialScan(**{**ok, "v_diff": np.zeros(n)})
    with pytest.raises(PatchError):
        AxialScan(**{**ok, "omega_exp": np.array([1.0, np.nan, 1.0])})
    with pytest.raises(PatchError):
        AxialScan(**{k: v[:1] for k, v in ok.items()})


def test_scan_csv_roundtrip(tmp_path):
    scan = _scan(cubic_patch(2e-3, 400 * UM))
    scan.to_csv(tmp_path / "scan.csv")
    back = AxialScan.from_csv(tmp_path / "scan.csv")
    assert np.allclose(back.x_exp, scan.x_exp, rtol=1e-9)
    assert np.allclose(back.omega_exp, scan.omega_exp, rtol=1e-9)


def test_schema_errors_name_the_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("V_ecD_V,x_exp_um\n1,2\n")
    with pytest.raises(SchemaError, match="line 1"):
        AxialScan.from_csv(p)
    p.write_text("x_um,U_patch_V,err_V\n1,2,3\n2,oops,3\n")
    with pytest.raises(SchemaError, match="line 3"):
        PatchPotential.from_csv(p)
    p.write_text("x_um,U_patch_V,err_V\n")
    with pytest.raises(SchemaError):
        PatchPotential.from_csv(p)


def test_patch_evaluate_flags_outside(tmp_path):
    x = np.linspace(-1e-4, 1e-4, 5)
    p = PatchPotential(x, x**2, np.zeros(5), 0.0)
    u, outside = p.evaluate([-2e-4, 0.0, 2e-4])
    assert list(outside) == [True, False, True]
    assert u[0] == pytest.approx(1e-8) and u[2] == pytest.approx(1e-8)
    p.to_csv(tmp_path / "p.csv")
    back = PatchPotential.from_csv(tmp_path / "p.csv")
    assert np.allclose(back.values, p.values)
    assert p.shifted(1.0).anchored()(0.0) == pytest.approx(0.0)


def test_patch_validation():
    with pytest.raises(PatchError):
        PatchPotential([0.0, 0.0], [0.0, 1.0], [0.0, 0.0])
    with pytest.raises(PatchError):
        PatchPotential([0.0, 1.0], [0.0, np.inf], [0.0, 0.0])


def test_anchor_outside_range():
    truth = cubic_patch(2e-3, 400 * UM)
    with pytest.raises(PatchError):
        reconstruct_from_positions(_scan(truth), anchor=1e-3)
    with pytest.raises(PatchError):
        reconstruct_from_frequencies(_scan(truth), 1e-3)


def test_position_error_profile():
    prof = position_dependent_error(zero_patch(), distances=(0, 400 * UM), errors=(1 * UM, 15 * UM))
    assert prof(0.0) == pytest.approx(1 * UM)
    assert prof(-200 * UM) == pytest.approx(8 * UM)
    assert prof(1e-3) == pytest.approx(15 * UM)
    with pytest.raises(ValueError):
        PositionErrorProfile(0.0, (0.0, 1.0), (2.0, 1.0))


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5e-3, 3e-3), st.floats(-50, 50))
def test_position_method_linear_in_plant(amplitude, shift_um):
    truth = cubic_patch(amplitude, 400 * UM, x_shift=shift_um * UM)
    pos = reconstruct_from_positions(_scan(truth))
    assert _rel_rms(pos, truth, pos.x_anchor) < 0.02
