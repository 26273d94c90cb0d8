"""Hand-tuned PID expert.

Two loops: a lateral loop on a composite cross-track error (offset plus a
weighted lookahead heading error) producing the steering command, and a
longitudinal loop holding a target speed via accel/brake. The expert both
generates the training data and serves as the automated fallback when the
learned controller is not trusted.

Default gains were frozen from the grid search in ``chicane tune-pid``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .sim import ControlCommand, VehicleState, wrap_angle
from .track import TrackFrame, TrackGeometry


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float = 0.0
    kd: float = 0.0
    integral_limit: float = 1.0
    output_limit: float = 1.0

    def __post_init__(self) -> None:
        if self.integral_limit <= 0 or self.output_limit <= 0:
            raise ValueError("limits must be positive")
        for g in (self.kp, self.ki, self.kd):
            if not math.isfinite(g):
                raise ValueError("gains must be finite")


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    prev_error: float = 0.0
    initialized: bool = False


def pid_step(error: float, gains: PidGains, st: PidState, dt: float) -> tuple[float, PidState]:
    """One PID update; returns (output, new state). Anti-windup by clamping."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    integral = st.integral + error * dt
    integral = min(max(integral, -gains.integral_limit), gains.integral_limit)
    derivative = (error - st.prev_error) / dt if st.initialized else 0.0
    out = gains.kp * error + gains.ki * integral + gains.kd * derivative
    out = min(max(out, -gains.output_limit), gains.output_limit)
    return out, PidState(integral=integral, prev_error=error, initialized=True)


@dataclass(frozen=True)
class ExpertConfig:
    """Frozen expert tuning (see ``chicane tune-pid``)."""

    steer_gains: PidGains = PidGains(kp=1.2, ki=0.0, kd=0.15, integral_limit=2.0)
    speed_gains: PidGains = PidGains(kp=0.5, ki=0.0, kd=0.0, integral_limit=5.0)
    heading_weight: float = 2.0   # k_psi: weight of the heading error term
    lookahead_m: float = 10.0     # where the reference heading is sampled


def lateral_error(state: VehicleState, frame: TrackFrame, track: TrackGeometry,
                  cfg: ExpertConfig) -> float:
    """Composite error: lateral offset plus weighted lookahead heading error."""
    psi_ahead = track.heading_at(frame.s + cfg.lookahead_m)
    return frame.d + cfg.heading_weight * wrap_angle(state.heading - psi_ahead)


def expert_command(
    state: VehicleState,
    frame: TrackFrame,
    track: TrackGeometry,
    target_speed: float,
    cfg: ExpertConfig,
    steer_st: PidState,
    speed_st: PidState,
    dt: float,
) -> tuple[ControlCommand, PidState, PidState]:
    """Compute the expert command for one control tick.

    Steering opposes the composite lateral error (left-positive offset needs
    a right turn, hence the sign flip); the speed loop maps its output to
    accel when positive and brake when negative.
    """
    e_lat = lateral_error(state, frame, track, cfg)
    u_lat, steer_st = pid_step(e_lat, cfg.steer_gains, steer_st, dt)
    u_spd, speed_st = pid_step(target_speed - state.speed, cfg.speed_gains, speed_st, dt)
    cmd = ControlCommand(
        steer=-u_lat,
        accel=u_spd if u_spd > 0.0 else 0.0,
        brake=-u_spd if u_spd < 0.0 else 0.0,
    ).clamped()
    return cmd, steer_st, speed_st
