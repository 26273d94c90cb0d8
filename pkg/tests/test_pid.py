import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chicane.pid import ExpertConfig, PidGains, PidState, expert_command, pid_step
from chicane.sim import VehicleState
from chicane.track import TrackFrame

from conftest import dense_rectangle


class TestPidStep:
    def test_zero_error_zero_output(self):
        gains = PidGains(kp=1.0, ki=0.5, kd=0.2)
        stt = PidState()
        for _ in range(10):
            out, stt = pid_step(0.0, gains, stt, 0.1)
        assert out == 0.0
        assert stt.integral == 0.0

    def test_hand_computed_first_call(self):
        gains = PidGains(kp=2.0, ki=0.5, kd=0.0, output_limit=10.0)
        out, stt = pid_step(1.0, gains, PidState(), 0.1)
        assert stt.integral == pytest.approx(0.1)
        assert out == pytest.approx(2.05)

    def test_pure_proportional(self):
        gains = PidGains(kp=1.0)
        out, _ = pid_step(0.3, gains, PidState(), 0.02)
        assert out == pytest.approx(0.3)

    def test_derivative_zero_on_first_call(self):
        gains = PidGains(kp=0.0, ki=0.0, kd=10.0, output_limit=1e6)
        out, stt = pid_step(5.0, gains, PidState(), 0.1)
        assert out == 0.0
        out2, _ = pid_step(6.0, gains, stt, 0.1)
        assert out2 == pytest.approx(10.0 * (6.0 - 5.0) / 0.1, abs=1e-12)

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=200))
    @settings(max_examples=100, deadline=None)
    def test_antiwindup_bounds_integral(self, errors):
        gains = PidGains(kp=0.1, ki=1.0, kd=0.0, integral_limit=2.0)
        stt = PidState()
        for e in errors:
            _, stt = pid_step(e, gains, stt, 0.1)
            assert abs(stt.integral) <= 2.0

    def test_output_clamped(self):
        gains = PidGains(kp=100.0, output_limit=1.0)
        out, _ = pid_step(10.0, gains, PidState(), 0.1)
        assert out == 1.0


class TestExpertCommand:
    def setup_method(self):
        self.track = dense_rectangle()
        self.cfg = ExpertConfig()
        self.dt = 0.02

    def _cmd(self, state, frame, target=26.82):
        cmd, _, _ = expert_command(state, frame, self.track, target, self.cfg,
                                   PidState(), PidState(), self.dt)
        return cmd

    def test_equilibrium_is_quiet(self):
        st_ = VehicleState(100.0, 0.0, 0.0, 26.82)
        f = self.track.project((100.0, 0.0))
        cmd = self._cmd(st_, f)
        assert cmd.steer == pytest.approx(0.0, abs=1e-9)
        assert cmd.accel == pytest.approx(0.0, abs=1e-9)
        assert cmd.brake == 0.0

    def test_left_offset_steers_right(self):
        # left-positive d with aligned heading: steer must be negative
        st_ = VehicleState(100.0, 2.0, 0.0, 26.82)
        f = self.track.project((100.0, 2.0))
        assert f.d == pytest.approx(2.0)
        cmd = self._cmd(st_, f)
        assert cmd.steer < 0.0

    def test_slow_car_accelerates(self):
        st_ = VehicleState(100.0, 0.0, 0.0, 20.0)
        f = self.track.project((100.0, 0.0))
        cmd = self._cmd(st_, f, target=26.82)
        assert cmd.accel > 0.0
        assert cmd.brake == 0.0

    def test_fast_car_brakes(self):
        st_ = VehicleState(100.0, 0.0, 0.0, 40.0)
        f = self.track.project((100.0, 0.0))
        cmd = self._cmd(st_, f, target=26.82)
        assert cmd.brake > 0.0
        assert cmd.accel == 0.0

    def test_deterministic(self):
        st_ = VehicleState(100.0, 1.0, 0.05, 25.0)
        f = self.track.project((100.0, 1.0))
        assert self._cmd(st_, f) == self._cmd(st_, f)
