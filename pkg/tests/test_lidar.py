import numpy as np
import pytest

from chicane.lidar import LidarConfig, scan
from chicane.sim import VehicleState
from chicane.track import OffCorridorError, TrackGeometry

from conftest import dense_rectangle


@pytest.fixture(scope="module")
def straight():
    return dense_rectangle()


def test_beam_count_must_be_odd():
    with pytest.raises(ValueError):
        LidarConfig(beam_count=6)
    with pytest.raises(ValueError):
        LidarConfig(beam_count=1)


def test_perpendicular_beam_reads_half_width(straight):
    cfg = LidarConfig()
    st = VehicleState(100.0, 0.0, 0.0, 10.0)
    out = scan(st, straight, cfg)
    assert out[-1] == pytest.approx(7.5, abs=1e-9)   # +pi/2 beam
    assert out[0] == pytest.approx(7.5, abs=1e-9)    # -pi/2 beam

def test_forward_beam_clamps_on_long_straight(straight):
    cfg = LidarConfig(max_range=200.0)
    st = VehicleState(50.0, 0.0, 0.0, 10.0)
    out = scan(st, straight, cfg)
    assert out[cfg.beam_count // 2] == pytest.approx(200.0)


def test_scan_palindrome_on_centerline(straight):
    cfg = LidarConfig()
    st = VehicleState(120.0, 0.0, 0.0, 10.0)
    out = scan(st, straight, cfg)
    assert np.allclose(out, out[::-1], atol=1e-9)


def test_all_beams_positive_and_clamped(train_a):
    cfg = LidarConfig()
    rng = np.random.default_rng(5)
    for _ in range(50):
        s = rng.uniform(0, train_a.total_length)
        d = rng.uniform(-0.8, 0.8) * train_a.half_width
        p = train_a.point_at(s) + d * train_a.normal_at(s)
        st = VehicleState(float(p[0]), float(p[1]), train_a.heading_at(s), 10.0)
        out = scan(st, train_a, cfg)
        assert (out > 0).all()
        assert (out <= cfg.max_range).all()


def test_translation_invariance():
    sq = dense_rectangle()
    moved = TrackGeometry(sq.waypoints + np.array([55.0, -20.0]),
                          half_width=sq.half_width, name="moved")
    cfg = LidarConfig()
    a = scan(VehicleState(100.0, 2.0, 0.3, 5.0), sq, cfg)
    b = scan(VehicleState(155.0, -18.0, 0.3, 5.0), moved, cfg)
    assert np.allclose(a, b, atol=1e-9)


def test_off_track_scan_rejected(straight):
    with pytest.raises(OffCorridorError):
        scan(VehicleState(100.0, 30.0, 0.0, 5.0), straight, LidarConfig())


def test_noise_hook_deterministic_and_off_by_default():
    cfg = LidarConfig()
    assert cfg.noise_std == 0.0
    from chicane.lidar import noise_rng
    assert noise_rng(cfg) is None
    noisy = LidarConfig(noise_std=0.05, noise_seed=9)
    sq = dense_rectangle()
    st = VehicleState(100.0, 0.0, 0.0, 5.0)
    a = scan(st, sq, noisy, rng=noise_rng(noisy))
    b = scan(st, sq, noisy, rng=noise_rng(noisy))
    clean = scan(st, sq, noisy)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, clean)
