"""Constant-velocity Kalman filter over ``[cx, cy, h, a, vx, vy, vh]``.

The aspect ratio ``a = w / h`` has no velocity term and is modelled as a
random walk. Noise scales follow the DeepSORT convention of tying position
and velocity noise to the box height.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import SingularInnovation
from .geometry import BoundingBox

MIN_BOX_PX = 1.0


@dataclass(frozen=True)
class KalmanNoise:
    std_position: float = 1.0 / 20
    std_velocity: float = 1.0 / 160
    std_aspect: float = 1e-2
    std_measurement: float = 1.0 / 20
    std_aspect_measurement: float = 1e-2
    init_position_factor: float = 2.0
    init_velocity_factor: float = 10.0


DEFAULT_NOISE = KalmanNoise()


@dataclass
class MotionState:
    x: np.ndarray  # (7,)
    P: np.ndarray  # (7, 7)

    def copy(self) -> "MotionState":
        return MotionState(self.x.copy(), self.P.copy())


def measurement_from_box(box: BoundingBox) -> np.ndarray:
    return np.array([box.x_c, box.y_c, box.h, box.w / box.h])


def initial_covariance(h: float, noise: KalmanNoise = DEFAULT_NOISE) -> np.ndarray:
    sp = noise.init_position_factor * noise.std_position * h
    sv = noise.init_velocity_factor * noise.std_velocity * h
    std = np.array([sp, sp, sp, noise.std_aspect, sv, sv, sv])
    return np.diag(std**2)


def kf_init(m, noise: KalmanNoise = DEFAULT_NOISE) -> MotionState:
    """State at rest on measurement ``m = [cx, cy, h, a]``."""
    m = np.asarray(m, dtype=np.float64)
    x = np.zeros(7)
    x[:4] = m
    return MotionState(x, initial_covariance(m[2], noise))


def kf_predict(s: MotionState, noise: KalmanNoise = DEFAULT_NOISE) -> MotionState:
    x, P = kernels.kf_predict(
        s.x[None], s.P[None], noise.std_position, noise.std_velocity, noise.std_aspect
    )
    return MotionState(x[0], P[0])


def kf_update(s: MotionState, m, noise: KalmanNoise = DEFAULT_NOISE) -> MotionState:
    """Kalman correction with a box measurement.

    Raises:
        SingularInnovation: the innovation covariance is not positive definite,
            which only happens when ``P`` has been corrupted.
    """
    m = np.asarray(m, dtype=np.float64)
    x, P, ok = kernels.kf_update(
        s.x[None], s.P[None], m[None], noise.std_measurement, noise.std_aspect_measurement
    )
    if not ok[0]:
        raise SingularInnovation("innovation covariance is not positive definite")
    return MotionState(x[0], P[0])


def box_from_state(x) -> BoundingBox:
    h = max(float(x[2]), MIN_BOX_PX)
    a = max(float(x[3]), kernels.MIN_SIZE)
    return BoundingBox(float(x[0]), float(x[1]), a * h, h)


def kf_predicted_box(s: MotionState) -> BoundingBox:
    return box_from_state(s.x)
