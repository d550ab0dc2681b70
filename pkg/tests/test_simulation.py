import numpy as np
import pytest

from gnssinit.errors import LengthMismatch
from gnssinit.manifold import Pose, exp_so3, is_rotation
from gnssinit.preintegration import ImuNoiseModel
from gnssinit.residuals import GLOBAL, RELATIVE, assemble_cost
from gnssinit.simulation import SensorConfig, TrajectoryModel, ate_rmse, generate, urban_like

NOISE = ImuNoiseModel.isotropic(1e-3, 1e-2)


def _sim(kind="figure_eight", params=None, duration=3.0, **cfg):
    return generate(TrajectoryModel(kind, params or {}, duration), SensorConfig(**cfg))


def _max_residual(*args, **kw):
    return max(np.max(np.abs(b.value)) for b in assemble_cost(*args, **kw))


@pytest.mark.parametrize(
    "kind,params",
    [
        ("figure_eight", {}),
        ("straight_line", {"v_body": [3.0, 0.0, 0.0]}),
        ("constant_rate_arc", {"omega": [0.1, -0.2, 0.6]}),
    ],
)
def test_noise_free_relative_residuals_vanish(kind, params):
    sim = _sim(kind, params, gnss_noise_sigma=0.0)
    state = sim.truth_state()
    pre = sim.preintegrate(NOISE)
    assert _max_residual(state, pre, sim.gnss, RELATIVE) < 1e-6


def test_noise_free_global_residuals_vanish_with_frame_offset():
    T = Pose(exp_so3(np.array([0.1, -0.3, 0.7])), np.array([5.0, -2.0, 1.0]))
    sim = _sim(gnss_noise_sigma=0.0, gnss_frame=T)
    assert _max_residual(sim.truth_state(), sim.preintegrate(NOISE), sim.gnss, GLOBAL, extrinsic=T) < 1e-6


def test_urban_profile_is_consistent():
    sim = generate(urban_like(), SensorConfig(gnss_noise_sigma=0.0))
    assert _max_residual(sim.truth_state(), sim.preintegrate(NOISE), sim.gnss, RELATIVE) < 1e-6
    # straight first segment
    first = sim.truth.omega[: int(2.5 * 200)]
    assert np.max(np.abs(first)) < 1e-12


def test_shapes_and_keyframes():
    sim = _sim(duration=2.0)
    assert len(sim.imu) == 401
    assert len(sim.gnss) == 11
    np.testing.assert_allclose(sim.keyframe_times(), [m.timestamp for m in sim.gnss])
    assert all(is_rotation(R) for R in sim.truth.R[::50])


def test_bias_enters_gyro_only():
    bg = np.array([0.01, -0.02, 0.005])
    a, b = _sim(), _sim(gyro_bias_true=bg)
    np.testing.assert_allclose(b.imu[10].gyro - a.imu[10].gyro, bg, atol=1e-15)
    np.testing.assert_array_equal(a.imu[10].accel, b.imu[10].accel)


def test_seeded_noise_is_reproducible():
    cfg = dict(gyro_noise_sigma=1e-3, accel_noise_sigma=1e-2, rng_seed=7)
    a, b = _sim(**cfg), _sim(**cfg)
    np.testing.assert_array_equal(a.imu[5].gyro, b.imu[5].gyro)
    np.testing.assert_array_equal(a.gnss[3].position, b.gnss[3].position)
    c = _sim(**{**cfg, "rng_seed": 8})
    assert not np.array_equal(a.gnss[3].position, c.gnss[3].position)


def test_gnss_noise_statistics():
    sim = _sim(duration=200.0, gnss_noise_sigma=0.2, rng_seed=3)
    err = np.array([m.position for m in sim.gnss]) - sim.truth_positions_gnss_frame()
    assert np.std(err) == pytest.approx(0.2, rel=0.05)


def test_config_validation():
    with pytest.raises(ValueError):
        SensorConfig(imu_rate=200.0, gnss_rate=3.0)
    with pytest.raises(ValueError):
        SensorConfig(gnss_noise_sigma=-1.0)
    with pytest.raises(ValueError):
        TrajectoryModel("spiral")
    with pytest.raises(ValueError):
        TrajectoryModel("straight_line", {}, 0.0)


def test_ate_rmse():
    a = np.zeros((4, 3))
    b = np.tile([3.0, 4.0, 0.0], (4, 1))
    assert ate_rmse(a, b) == pytest.approx(5.0)
    with pytest.raises(LengthMismatch):
        ate_rmse(a, b[:3])
