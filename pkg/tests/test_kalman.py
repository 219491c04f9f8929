import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lumentrack.errors import SingularInnovation
from lumentrack.geometry import BoundingBox
from lumentrack.kalman import MotionState, box_from_state, kf_init, kf_predict, kf_update, measurement_from_box


def test_init_is_at_rest():
    s = kf_init([10, 20, 30, 1.5])
    assert np.array_equal(s.x[:4], [10, 20, 30, 1.5])
    assert np.all(s.x[4:] == 0)
    assert np.allclose(s.P, s.P.T)


def test_predict_at_rest_keeps_mean_and_grows_covariance():
    s = kf_init([10, 20, 30, 1.0])
    p = kf_predict(s)
    assert np.allclose(p.x, s.x)
    assert np.all(np.diag(p.P) >= np.diag(s.P))


def test_constant_velocity_is_learned():
    s = kf_init([0, 0, 20, 1.0])
    for t in range(1, 40):
        s = kf_update(kf_predict(s), [2.0 * t, -1.0 * t, 20, 1.0])
    assert s.x[4] == pytest.approx(2.0, abs=0.05)
    assert s.x[5] == pytest.approx(-1.0, abs=0.05)
    nxt = kf_predict(s)
    assert nxt.x[0] == pytest.approx(80.0, abs=0.5)


def test_update_pulls_towards_measurement():
    s = kf_predict(kf_init([0, 0, 20, 1.0]))
    u = kf_update(s, [10, 0, 20, 1.0])
    assert 0 < u.x[0] < 10


def test_corrupted_covariance_raises():
    s = MotionState(np.array([0, 0, 20, 1.0, 0, 0, 0]), -np.eye(7) * 1e6)
    with pytest.raises(SingularInnovation):
        kf_update(s, [0, 0, 20, 1.0])


def test_box_roundtrip():
    b = BoundingBox(5, 6, 8, 4)
    s = kf_init(measurement_from_box(b))
    r = box_from_state(s.x)
    assert (r.x_c, r.y_c, r.w, r.h) == pytest.approx((5, 6, 8, 4))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=1, max_size=15))
def test_covariance_stays_symmetric_psd(moves):
    s = kf_init([100, 100, 30, 1.0])
    for dx, dy in moves:
        s = kf_predict(s)
        s = kf_update(s, [100 + dx, 100 + dy, 30, 1.0])
        assert np.allclose(s.P, s.P.T, atol=1e-9)
        assert np.linalg.eigvalsh(s.P).min() > -1e-9
