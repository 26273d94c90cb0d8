"""Concrete control policies for episode execution.

All learned policies steer only; the longitudinal command always comes from
the PID speed loop, mirroring how the training data was produced.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .forest import Forest, PredictionStats
from .mlp import MlpModel
from .pid import ExpertConfig, PidGains, PidState, expert_command, pid_step
from .sim import ControlCommand, Decision, Observation
from .supervisor import (
    ControlSource,
    RunStats,
    SupervisorConfig,
    SupervisorState,
    arbitrate,
)
from .track import TrackGeometry


class SpeedLoop:
    """PID speed hold shared by every policy."""

    def __init__(self, target_speed: float, gains: PidGains, dt: float):
        self.target_speed = target_speed
        self.gains = gains
        self.dt = dt
        self._st = PidState()

    def reset(self) -> None:
        self._st = PidState()

    def step(self, speed: float) -> tuple[float, float]:
        u, self._st = pid_step(self.target_speed - speed, self.gains, self._st, self.dt)
        return (u, 0.0) if u > 0.0 else (0.0, -u)


class PidExpertController:
    """The tuned expert: composite-error lateral PID plus speed hold."""

    source = "expert"

    def __init__(self, track: TrackGeometry, target_speed: float, dt: float,
                 cfg: ExpertConfig = ExpertConfig()):
        self.track = track
        self.target_speed = target_speed
        self.dt = dt
        self.cfg = cfg
        self._steer_st = PidState()
        self._speed_st = PidState()

    def reset(self) -> None:
        self._steer_st = PidState()
        self._speed_st = PidState()

    def act(self, obs: Observation) -> Decision:
        cmd, self._steer_st, self._speed_st = expert_command(
            obs.state, obs.frame, self.track, self.target_speed, self.cfg,
            self._steer_st, self._speed_st, self.dt,
        )
        return Decision(command=cmd, source=self.source)


class ForestController:
    """Steer from the ensemble mean; diagnostics carry the spread."""

    def __init__(self, forest: Forest, speed: SpeedLoop):
        self.forest = forest
        self.speed = speed
        self.last_stats: Optional[PredictionStats] = None

    def reset(self) -> None:
        self.speed.reset()
        self.last_stats = None

    def act(self, obs: Observation) -> Decision:
        stats = self.forest.predict_with_stats(obs.scan)
        self.last_stats = stats
        accel, brake = self.speed.step(obs.state.speed)
        cmd = ControlCommand(steer=stats.mean, accel=accel, brake=brake).clamped()
        return Decision(command=cmd, source="learned", shat=stats.mean,
                        sigma=stats.std, cov=stats.cov, odd_count=stats.odd_count)


class MlpController:
    def __init__(self, model: MlpModel, speed: SpeedLoop):
        self.model = model
        self.speed = speed

    def reset(self) -> None:
        self.speed.reset()

    def act(self, obs: Observation) -> Decision:
        steer = self.model.predict(obs.scan)
        accel, brake = self.speed.step(obs.state.speed)
        cmd = ControlCommand(steer=steer, accel=accel, brake=brake).clamped()
        return Decision(command=cmd, source="learned")


@dataclass
class OverrideInput:
    """Latest human override, if any: a steering value to apply verbatim."""

    steer: Optional[float] = None


class SupervisedController:
    """Forest control with CoV-gated PID fallback and human preemption.

    The override provider is polled every control tick; returning a steer
    value takes control for that tick (longitudinal stays on the speed
    loop). Run statistics accumulate every tick regardless of source.
    """

    def __init__(
        self,
        forest: Forest,
        expert: PidExpertController,
        cfg: SupervisorConfig,
        override_provider: Optional[Callable[[], Optional[float]]] = None,
    ):
        self.forest = forest
        self.expert = expert
        self.cfg = cfg
        self.override_provider = override_provider
        self.speed = SpeedLoop(expert.target_speed, expert.cfg.speed_gains, expert.dt)
        self.state = SupervisorState()
        self.stats = RunStats()

    def reset(self) -> None:
        self.expert.reset()
        self.speed.reset()
        self.state = SupervisorState()
        self.stats = RunStats()

    def act(self, obs: Observation) -> Decision:
        pred = self.forest.predict_with_stats(obs.scan)
        accel, brake = self.speed.step(obs.state.speed)
        learned = ControlCommand(steer=pred.mean, accel=accel, brake=brake).clamped()
        fallback = self.expert.act(obs).command

        override_cmd = None
        if self.override_provider is not None:
            steer = self.override_provider()
            if steer is not None:
                override_cmd = ControlCommand(
                    steer=steer, accel=accel, brake=brake
                ).clamped()

        prev = self.state.prev_source
        cmd, source, self.state = arbitrate(
            pred, learned, fallback, override_cmd, self.state, self.cfg
        )
        self.stats.record(pred, source, prev, cmd.steer)
        return Decision(command=cmd, source=source.value, shat=pred.mean,
                        sigma=pred.std, cov=pred.cov, odd_count=pred.odd_count)
