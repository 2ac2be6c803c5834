import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import analytic_bases
from fibercharge.composer import EndcapVoltages
from fibercharge.constants import KHZ, UM
from fibercharge.geometry import TrapConfig
from fibercharge.inference import ScanModel
from fibercharge.synthdata import (
    POSITIONER_M,
    POSITIONER_P,
    AxialTrapModel,
    CameraModel,
    GenerationError,
    NoiseModel,
    PolynomialPatch,
    PositionerModel,
    cubic_patch,
    generate_dataset,
    plant_patch,
    simulate_retraction_sequence,
    synthetic_axial_scan,
    zero_endcap_equilibrium,
)

D = np.array([1600, 1000, 800, 600]) * UM


@pytest.fixture(scope="module")
def model():
    bases = {d: analytic_bases(h=10 * UM, d=d, x_fiber=10 * UM, tag_hash=f"a{d}") for d in D}
    return ScanModel(bases, TrapConfig(), EndcapVoltages(1500, 1500))


def test_positioner_presets():
    assert (POSITIONER_M.step_out, POSITIONER_M.step_in) == (1.7 * UM, 2.2 * UM)
    assert (POSITIONER_P.step_out, POSITIONER_P.step_in) == (2.0 * UM, 1.8 * UM)
    assert POSITIONER_P.d_uncertainty(0.5e-3) == 13 * UM
    assert POSITIONER_P.d_uncertainty(1.0e-3) == 30 * UM
    assert POSITIONER_M.steps_for(22 * UM, "in") == 10
    with pytest.raises(ValueError):
        PositionerModel(0.0, 1.0)


def test_retraction_sequence_direction_dependent():
    d = simulate_retraction_sequence(POSITIONER_M, [10, -10, 5], start=1e-3)
    assert np.allclose(np.diff(d), [17 * UM, -22 * UM, 8.5 * UM])


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(-200, 200), min_size=1, max_size=10))
def test_retraction_sequence_sum(steps):
    d = simulate_retraction_sequence(POSITIONER_P, steps)
    out = sum(s for s in steps if s > 0) * 2.0 * UM
    back = sum(-s for s in steps if s < 0) * 1.8 * UM
    assert d[-1] == pytest.approx(out - back, abs=1e-15)


def test_retraction_jitter_is_seeded():
    a = simulate_retraction_sequence(POSITIONER_P, [100, -50], jitter=True, rng=np.random.default_rng(4))
    b = simulate_retraction_sequence(POSITIONER_P, [100, -50], jitter=True, rng=np.random.default_rng(4))
    assert np.array_equal(a, b)
    assert not np.allclose(a, simulate_retraction_sequence(POSITIONER_P, [100, -50]))


def test_camera_quantization():
    cam = CameraModel()
    assert cam.image(0.83e-6 * 3.4) == pytest.approx(0.83e-6 * 3)
    assert CameraModel(quantize=False).image(1.234e-6) == 1.234e-6
    assert list(cam.in_view([0.0, 1e-3])) == [True, False]
    with pytest.raises(ValueError):
        CameraModel(pixel_pitch=0.0)


def test_noise_model():
    assert NoiseModel().frequency_sigma == pytest.approx(2 * np.pi * 2 * KHZ)
    assert NoiseModel.noiseless().position_sigma == 0
    with pytest.raises(ValueError):
        NoiseModel(-1.0)


def test_plants():
    p = PolynomialPatch((1.0, 0.0, 0.0), x_shift=1e-4)
    assert p(1e-4) == 0.0 and p(2e-4) == pytest.approx(1e-8)
    s = plant_patch([1.0, 0.0, 0.0])
    assert s(1e-4) == pytest.approx(1e-8, rel=1e-3)
    sampled = plant_patch(samples=([0.0, 1.0], [2.0, 3.0]))
    assert sampled(0.5) == pytest.approx(2.5)
    c = cubic_patch(2e-3, 400 * UM)
    assert c(400 * UM) - c(-400 * UM) == pytest.approx(2e-3)


def test_axial_model_without_patch():
    trap = AxialTrapModel(tilt_per_volt=1e-3)
    x, w = trap.equilibrium(50.0)
    assert x == pytest.approx(-1e-3 * 50 / trap.k_v)
    assert w == trap.omega
    assert trap.v_for_position(x) == pytest.approx(50.0)


def test_axial_model_detects_deconfinement():
    trap = AxialTrapModel(tilt_per_volt=1e-3)
    anti = PolynomialPatch((-trap.k_v, 0.0, 0.0))
    with pytest.raises(GenerationError):
        trap.equilibrium(0.0, anti)


def test_synthetic_scan_noise_is_seeded():
    trap = AxialTrapModel(tilt_per_volt=1.6)
    v = np.linspace(-100, 100, 11)
    a = synthetic_axial_scan(trap, cubic_patch(), v, noise=NoiseModel(seed=1), camera=CameraModel())
    b = synthetic_axial_scan(trap, cubic_patch(), v, noise=NoiseModel(seed=1), camera=CameraModel())
    assert np.array_equal(a.x_exp, b.x_exp) and np.array_equal(a.omega_exp, b.omega_exp)


def test_zero_endcap_equilibrium_symmetric():
    assert zero_endcap_equilibrium(PolynomialPatch((1.0, 0.0, 0.0)), rf_curvature=0.0) == pytest.approx(0.0,
                                                                                                       abs=1e-9)


def test_generate_dataset_noiseless(model):
    data = generate_dataset(model, 4.0, 8.5)
    preds = model.predict(4.0, 8.5)
    assert np.allclose(data.x, [p.x for p in preds])
    assert np.allclose(data.omega, [p.omega for p in preds])
    assert data.moving == "P" and len(data) == len(D)


def test_generate_dataset_seeded(model):
    a = generate_dataset(model, 4.0, 8.5, NoiseModel(seed=3), CameraModel(), POSITIONER_P)
    b = generate_dataset(model, 4.0, 8.5, NoiseModel(seed=3), CameraModel(), POSITIONER_P)
    c = generate_dataset(model, 4.0, 8.5, NoiseModel(seed=4), CameraModel(), POSITIONER_P)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.omega, b.omega)
    assert not np.array_equal(a.x, c.x)
    assert list(a.d_err) == [13 * UM, 30 * UM, 30 * UM, 30 * UM]
