"""Kalman filter with a constant-velocity motion model, the single-hypothesis
forecasting baseline.

State is (x, y, vx, vy) in the ego-relative frame; the sensor provides all
four components, so the measurement map is the identity. The filter runs
predict+update over the observation window, then extrapolates by pure
prediction, quantizing the mean position onto the grid every 0.2 s.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ogm

__all__ = ["KalmanState", "CvModel", "kf_init", "kf_predict", "kf_update", "kf_forecast"]


def _cv_transition(dt: float) -> np.ndarray:
    f = np.eye(4)
    f[0, 2] = dt
    f[1, 3] = dt
    return f


def _white_accel_noise(dt: float, sigma_a: float) -> np.ndarray:
    # white-acceleration (piecewise constant) process noise
    q_pos = dt**4 / 4.0
    q_cross = dt**3 / 2.0
    q_vel = dt**2
    q = np.array(
        [
            [q_pos, 0.0, q_cross, 0.0],
            [0.0, q_pos, 0.0, q_cross],
            [q_cross, 0.0, q_vel, 0.0],
            [0.0, q_cross, 0.0, q_vel],
        ]
    )
    return sigma_a**2 * q


@dataclass(frozen=True)
class CvModel:
    """Constant-velocity dynamics at the 100 ms frame period plus the noise
    magnitudes (these are tuning parameters, exposed in the run config)."""

    dt: float = 0.1
    sigma_a: float = 2.0  # process acceleration, m/s^2
    sigma_x: float = 0.5  # measurement noise stds
    sigma_y: float = 0.2
    sigma_vx: float = 0.5
    sigma_vy: float = 0.5
    init_pos_var: float = 1.0
    init_vel_var: float = 4.0

    @property
    def transition(self) -> np.ndarray:
        return _cv_transition(self.dt)

    @property
    def process_noise(self) -> np.ndarray:
        return _white_accel_noise(self.dt, self.sigma_a)

    @property
    def measurement_map(self) -> np.ndarray:
        return np.eye(4)

    @property
    def measurement_noise(self) -> np.ndarray:
        return np.diag([self.sigma_x**2, self.sigma_y**2, self.sigma_vx**2, self.sigma_vy**2])


@dataclass
class KalmanState:
    mean: np.ndarray  # (x, y, vx, vy)
    covariance: np.ndarray  # (4, 4), symmetric PSD

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.covariance = np.asarray(self.covariance, dtype=np.float64)
        if self.mean.shape != (4,) or self.covariance.shape != (4, 4):
            raise ValueError("state is a 4-vector with a 4x4 covariance")


def kf_init(z: np.ndarray, model: CvModel) -> KalmanState:
    """State from the first measurement, with the configured initial spread."""
    cov = np.diag([model.init_pos_var, model.init_pos_var, model.init_vel_var, model.init_vel_var])
    return KalmanState(mean=np.asarray(z, dtype=np.float64).copy(), covariance=cov)


def kf_predict(state: KalmanState, model: CvModel) -> KalmanState:
    f = model.transition
    mean = f @ state.mean
    cov = f @ state.covariance @ f.T + model.process_noise
    return KalmanState(mean=mean, covariance=cov)


def kf_update(state: KalmanState, model: CvModel, z: np.ndarray) -> KalmanState:
    """Measurement correction; Joseph-form covariance update for symmetry."""
    z = np.asarray(z, dtype=np.float64)
    h = model.measurement_map
    r = model.measurement_noise
    innovation = z - h @ state.mean
    s = h @ state.covariance @ h.T + r
    try:
        gain = np.linalg.solve(s.T, (state.covariance @ h.T).T).T
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"innovation covariance not invertible: {exc}") from exc
    mean = state.mean + gain @ innovation
    ikh = np.eye(4) - gain @ h
    cov = ikh @ state.covariance @ ikh.T + gain @ r @ gain.T
    return KalmanState(mean=mean, covariance=cov)


def kf_filter_window(obs: np.ndarray, model: CvModel) -> KalmanState:
    """Filter an (M, 6) observation window; measurements are the relative
    position/velocity features (columns 2..5)."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[1] != 6 or obs.shape[0] < 1:
        raise ValueError(f"expected an (M, 6) observation window, got {obs.shape}")
    measurements = obs[:, 2:6]
    state = kf_init(measurements[0], model)
    for z in measurements[1:]:
        state = kf_predict(state, model)
        state = kf_update(state, model, z)
    return state


def kf_forecast(
    obs: np.ndarray,
    model: CvModel = CvModel(),
    horizon: int = 10,
    grid: ogm.GridSpec = ogm.GridSpec(),
) -> list[int]:
    """Filter the window, then extrapolate: two 100 ms predictions per output
    step (0.2 s cadence), quantizing each mean position to a flat class."""
    state = kf_filter_window(obs, model)
    forecast: list[int] = []
    for _ in range(horizon):
        state = kf_predict(state, model)
        state = kf_predict(state, model)
        x, y = state.mean[0], state.mean[1]
        forecast.append(ogm.flatten(ogm.quantize(float(x), float(y), grid), grid))
    return forecast
