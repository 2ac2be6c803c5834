import json

import numpy as np
import pytest

from conftest import analytic_bases
from fibercharge.composer import EndcapVoltages
from fibercharge.constants import KHZ, UM
from fibercharge.field_solver import StaleBasisError, charge_tag
from fibercharge.geometry import TrapConfig
from fibercharge.inference import (
    ErrorBudget,
    FiberScanDataset,
    InferenceError,
    Prediction,
    ScanModel,
    grid_scan,
    infer,
    position_offset_sweep,
    refine,
    residual,
    residual_report,
)
from fibercharge.patch import PositionErrorProfile, SchemaError
from fibercharge.synthdata import generate_dataset

D = np.array([1600, 1200, 1000, 800, 700, 600]) * UM
TRAP = TrapConfig()


def _model(x_fiber=10 * UM, **kw):
    bases = {d: analytic_bases(h=10 * UM, d=d, x_fiber=x_fiber, tag_hash=f"a{d}") for d in D}
    return ScanModel(bases, TRAP, EndcapVoltages(1500, 1500), **kw)


@pytest.fixture(scope="module")
def model():
    return _model()


@pytest.mark.parametrize("plant", [(4.0, 8.5), (-2.1, 1.3)])
def test_noiseless_round_trip(model, plant):
    data = generate_dataset(model, *plant)
    r = refine(data, model, (0.0, 0.0))
    assert r.sigma_f == pytest.approx(plant[0], abs=0.01)
    assert r.sigma_s == pytest.approx(plant[1], abs=0.01)
    assert r.mean_residual < 1e-6


def test_grid_scan_finds_plant(model):
    data = generate_dataset(model, 4.0, 8.5)
    surf = grid_scan(data, model, sigma_f_range=(0, 8), sigma_s_range=(5, 12), step=0.5)
    assert surf.values.shape == (17, 15)
    assert surf.minimum == (4.0, 8.5)
    assert np.isfinite(surf.valley_slope())


def test_infer_and_constrained(model):
    data = generate_dataset(model, 2.0, 9.0)
    free = infer(data, model, sigma_f_range=(-2, 12), sigma_s_range=(-2, 12), step=1.0)
    fixed = refine(data, model, (free.sigma_f, free.sigma_s), constrained=True)
    assert fixed.sigma_f == fixed.sigma_s
    assert fixed.mean_residual > free.mean_residual
    d = free.to_dict()
    assert d["grid_minimum"] == [2.0, 9.0]
    json.dumps(d)


def test_grid_scan_jobs_identical(model):
    data = generate_dataset(model, 4.0, 8.5)
    a = grid_scan(data, model, sigma_f_range=(2, 6), sigma_s_range=(6, 10), step=1.0, jobs=1)
    b = grid_scan(data, model, sigma_f_range=(2, 6), sigma_s_range=(6, 10), step=1.0, jobs=2)
    assert np.array_equal(a.values, b.values)


def test_residual_convention(model):
    data = generate_dataset(model, 4.0, 8.5)
    budget = ErrorBudget(sim_position=0.0, sim_frequency=0.0, recon_frequency=0.0)
    preds = [Prediction(p.d, p.kind, p.x + data.x_err[i], p.omega) for i, p in enumerate(model.predict(4, 8.5))]
    assert residual(preds, data, budget) == pytest.approx(1.0)


def test_transition_points_excluded(model):
    data = generate_dataset(model, 4.0, 8.5)
    data.kind[2] = "transition"
    data.x[2] = np.nan
    preds = model.predict(4.0, 8.5)
    preds[4] = Prediction(preds[4].d, "transition")
    rep = residual_report(preds, data, ErrorBudget())
    assert rep.excluded == [data.d[2], data.d[4]]
    assert not rep.included[2] and not rep.included[4]
    assert np.isnan(rep.terms[2])
    with pytest.raises(InferenceError):
        residual_report([Prediction(d, "transition") for d in data.d], data, ErrorBudget())


def test_error_budget_weights(model):
    data = generate_dataset(model, 4.0, 8.5)
    b = ErrorBudget(recon_position=PositionErrorProfile(0.0))
    w_x, w_w = b.weights(data)
    assert np.all(w_x >= data.x_err + 0.5 * UM + 1 * UM - 1e-15)
    assert np.allclose(w_w, data.omega_err + (2 + 4.8) * 2 * np.pi * KHZ)
    with pytest.raises(ValueError):
        ErrorBudget(meas_position=-1.0)


def test_offset_sweep_picks_true_offset():
    truth = _model(x_fiber=10 * UM)
    data = generate_dataset(truth, 4.0, 8.5)
    models = {off: _model(x_fiber=off) for off in (0.0, 10 * UM, 20 * UM)}
    best, results = position_offset_sweep(data, models, models.__getitem__, (3.0, 8.0))
    assert best == 10 * UM
    assert results[best].x_offset == 10 * UM


def test_dataset_csv_roundtrip(tmp_path, model):
    data = generate_dataset(model, 4.0, 8.5)
    data.kind[0] = "transition"
    data.x[0] = np.nan
    data.to_csv(tmp_path / "d.csv")
    back = FiberScanDataset.from_csv(tmp_path / "d.csv")
    assert back.kind == data.kind
    assert np.allclose(back.omega, data.omega, rtol=1e-9)
    assert list(back.usable) == list(data.usable)


def test_dataset_validation(tmp_path):
    ok = dict(d=[1e-3, 2e-3], d_err=[1e-5, 1e-5], x=[0, 0], x_err=[1e-6, 1e-6], omega=[1, 1], omega_err=[1, 1])
    FiberScanDataset(**ok)
    with pytest.raises(SchemaError):
        FiberScanDataset(**{**ok, "x_err": [0.0, 1e-6]})
    with pytest.raises(SchemaError):
        FiberScanDataset(**{**ok, "d": [1e-3, 1e-3]})
    with pytest.raises(SchemaError):
        FiberScanDataset(**ok, moving="Q")
    (tmp_path / "bad.csv").write_text("d_um,x_um\n1,2\n")
    with pytest.raises(SchemaError):
        FiberScanDataset.from_csv(tmp_path / "bad.csv")


def test_model_rejects_mixed_bases():
    bases = {d: analytic_bases(h=10 * UM, d=d, tag_hash=f"a{d}") for d in D[:2]}
    bases[D[0]][charge_tag("P", "f")] = analytic_bases(h=10 * UM, tag_hash="other")[charge_tag("P", "f")]
    with pytest.raises(StaleBasisError):
        ScanModel(bases, TRAP, EndcapVoltages(1500, 1500))
    with pytest.raises(InferenceError):
        ScanModel({}, TRAP, EndcapVoltages(1500, 1500))


def test_unknown_distance(model):
    with pytest.raises(InferenceError):
        model.predict_one(123 * UM, 0, 0)


def test_grid_scan_needs_usable_points(model):
    data = generate_dataset(model, 4.0, 8.5)
    data.kind = ["transition"] * len(data)
    with pytest.raises(InferenceError):
        grid_scan(data, model, sigma_f_range=(3, 4), sigma_s_range=(8, 9))
