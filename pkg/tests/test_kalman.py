"""Constant-velocity Kalman baseline: propagation, correction against the
closed-form scalar filter, covariance discipline, forecast exactness."""

import numpy as np
import pytest

from gridcast import ogm
from gridcast.kalman import CvModel, KalmanState, kf_filter_window, kf_forecast, kf_init, kf_predict, kf_update

MODEL = CvModel()
GRID = ogm.GridSpec()


def cv_frames(n, x0, y0, vx, vy, ego_speed=25.0):
    t = np.arange(n) * MODEL.dt
    return np.column_stack(
        [np.full(n, ego_speed), np.zeros(n), x0 + vx * t, y0 + vy * t, np.full(n, vx), np.full(n, vy)]
    )


class TestPredict:
    def test_cv_propagation(self):
        state = KalmanState(mean=np.array([0.0, 0.0, 10.0, 0.0]), covariance=np.eye(4))
        out = kf_predict(state, MODEL)
        assert np.allclose(out.mean, [1.0, 0.0, 10.0, 0.0], atol=1e-15)

    def test_zero_velocity_keeps_position(self):
        state = KalmanState(mean=np.array([5.0, -2.0, 0.0, 0.0]), covariance=np.eye(4))
        out = kf_predict(state, MODEL)
        assert np.allclose(out.mean, [5.0, -2.0, 0.0, 0.0], atol=1e-15)

    def test_covariance_trace_grows(self):
        state = KalmanState(mean=np.zeros(4), covariance=np.eye(4))
        out = kf_predict(state, MODEL)
        assert np.trace(out.covariance) > np.trace(state.covariance)

    def test_covariance_stays_symmetric(self):
        state = KalmanState(mean=np.zeros(4), covariance=np.diag([1.0, 2.0, 3.0, 4.0]))
        for _ in range(50):
            state = kf_predict(state, MODEL)
        assert np.max(np.abs(state.covariance - state.covariance.T)) < 1e-9


class TestUpdate:
    def test_zero_innovation_keeps_mean(self):
        state = KalmanState(mean=np.array([3.0, 1.0, 2.0, -1.0]), covariance=np.eye(4))
        out = kf_update(state, MODEL, state.mean.copy())
        assert np.allclose(out.mean, state.mean, atol=1e-12)

    def test_tiny_measurement_noise_pulls_to_measurement(self):
        model = CvModel(sigma_x=1e-6, sigma_y=1e-6, sigma_vx=1e-6, sigma_vy=1e-6)
        state = KalmanState(mean=np.zeros(4), covariance=np.eye(4))
        z = np.array([2.0, -1.0, 4.0, 0.5])
        out = kf_update(state, model, z)
        assert np.allclose(out.mean, z, atol=1e-9)

    def test_scalar_case_matches_closed_form(self):
        # project onto the x coordinate: gain = P/(P+R)
        prior_var, meas_var = 2.0, 0.5
        state = KalmanState(
            mean=np.array([1.0, 0.0, 0.0, 0.0]),
            covariance=np.diag([prior_var, 1e-12, 1e-12, 1e-12]),
        )
        model = CvModel(sigma_x=np.sqrt(meas_var), sigma_y=1e-6, sigma_vx=1e-6, sigma_vy=1e-6)
        z = np.array([3.0, 0.0, 0.0, 0.0])
        out = kf_update(state, model, z)
        gain = prior_var / (prior_var + meas_var)
        assert out.mean[0] == pytest.approx(1.0 + gain * 2.0, rel=1e-9)
        assert out.covariance[0, 0] == pytest.approx((1 - gain) * prior_var, rel=1e-6)

    def test_joseph_form_symmetry_through_sequence(self):
        rng = np.random.default_rng(0)
        state = kf_init(np.array([10.0, 0.0, 5.0, 0.0]), MODEL)
        for _ in range(100):
            state = kf_predict(state, MODEL)
            state = kf_update(state, MODEL, rng.standard_normal(4) * 5)
        asym = np.max(np.abs(state.covariance - state.covariance.T))
        assert asym < 1e-9
        assert np.all(np.diag(state.covariance) >= 0)


class TestForecast:
    def test_noiseless_cv_track_exact(self):
        x0, y0, vx, vy = 40.0, -1.5, 6.0, 0.3
        frames = cv_frames(30, x0, y0, vx, vy)
        forecast = kf_forecast(frames, MODEL, horizon=10, grid=GRID)
        t_last = 29 * MODEL.dt
        expected = []
        for j in range(1, 11):
            x = x0 + vx * (t_last + 0.2 * j)
            y = y0 + vy * (t_last + 0.2 * j)
            expected.append(ogm.flatten(ogm.quantize(x, y, GRID), GRID))
        assert forecast == expected

    def test_mean_position_error_machine_precision(self):
        x0, y0, vx, vy = 40.0, -1.5, 6.0, 0.3
        frames = cv_frames(30, x0, y0, vx, vy)
        state = kf_filter_window(frames, MODEL)
        t_last = 29 * MODEL.dt
        assert np.allclose(state.mean, [x0 + vx * t_last, y0 + vy * t_last, vx, vy], atol=1e-9)

    def test_track_exiting_range_goes_out_of_map(self):
        # last observation at 174.5 m; forecast positions cross 180 m mid-horizon
        frames = cv_frames(30, 160.0, 0.0, 5.0, 0.0)
        forecast = kf_forecast(frames, MODEL, horizon=10, grid=GRID)
        assert forecast[-1] == 757
        assert forecast[0] != 757

    def test_forecast_length_default(self):
        frames = cv_frames(30, 50.0, 0.0, 0.0, 0.0)
        assert len(kf_forecast(frames, MODEL, horizon=10, grid=GRID)) == 10

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        frames = cv_frames(30, 50.0, 1.0, 3.0, -0.2) + rng.standard_normal((30, 6)) * 0.1
        a = kf_forecast(frames, MODEL, 10, GRID)
        b = kf_forecast(frames, MODEL, 10, GRID)
        assert a == b

    def test_window_shape_validated(self):
        with pytest.raises(ValueError):
            kf_filter_window(np.zeros((0, 6)), MODEL)
        with pytest.raises(ValueError):
            kf_filter_window(np.zeros((10, 5)), MODEL)


def test_noise_matrices_psd():
    q = MODEL.process_noise
    r = MODEL.measurement_noise
    assert np.all(np.linalg.eigvalsh(q) >= -1e-12)
    assert np.all(np.linalg.eigvalsh(r) > 0)
