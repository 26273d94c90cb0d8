"""Kinematic bicycle simulation and episode execution.

Physics runs at a fixed step (default 0.002 s, explicit Euler). Controllers
are queried at a lower control rate (default 50 Hz) and their command is
held between queries, matching the client-server tick of typical racing
simulators. Every physics step is logged.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np

from .track import TrackCursor, TrackFrame, TrackGeometry

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    r = math.fmod(a + math.pi, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    r -= math.pi
    return math.pi if r == -math.pi else r


@dataclass(frozen=True, slots=True)
class VehicleState:
    x: float
    y: float
    heading: float  # rad, in (-pi, pi]
    speed: float    # m/s, >= 0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)
                and math.isfinite(self.heading) and math.isfinite(self.speed)):
            raise ValueError("vehicle state must be finite")
        if self.speed < 0.0:
            raise ValueError("speed must be >= 0")


@dataclass(frozen=True, slots=True)
class ControlCommand:
    steer: float = 0.0   # [-1, 1]
    accel: float = 0.0   # [0, 1]
    brake: float = 0.0   # [0, 1]

    def clamped(self) -> "ControlCommand":
        return ControlCommand(
            steer=min(max(self.steer, -1.0), 1.0),
            accel=min(max(self.accel, 0.0), 1.0),
            brake=min(max(self.brake, 0.0), 1.0),
        )

    def is_finite(self) -> bool:
        return (math.isfinite(self.steer) and math.isfinite(self.accel)
                and math.isfinite(self.brake))


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.002               # s
    wheelbase: float = 2.5          # m
    max_wheel_angle: float = 0.35   # rad; steer=1 maps to this wheel angle
    max_accel: float = 4.0          # m/s^2 at accel=1
    max_decel: float = 8.0          # m/s^2 at brake=1
    max_speed: float = 60.0         # m/s

    def __post_init__(self) -> None:
        if self.dt <= 0 or self.wheelbase <= 0:
            raise ValueError("dt and wheelbase must be positive")
        if not 0.0 < self.max_wheel_angle < math.pi / 2:
            raise ValueError("max_wheel_angle must be in (0, pi/2)")


def step(state: VehicleState, cmd: ControlCommand, cfg: SimConfig) -> VehicleState:
    """One explicit Euler step of the kinematic bicycle model.

    Position advances with the pre-update heading and speed; the command is
    clamped to its valid intervals before use.
    """
    cmd = cmd.clamped()
    delta = cmd.steer * cfg.max_wheel_angle
    heading_rate = state.speed * math.tan(delta) / cfg.wheelbase
    accel = cmd.accel * cfg.max_accel - cmd.brake * cfg.max_decel
    x = state.x + state.speed * math.cos(state.heading) * cfg.dt
    y = state.y + state.speed * math.sin(state.heading) * cfg.dt
    # only wrap when leaving the interval: coasting must hold heading exactly
    heading = state.heading + heading_rate * cfg.dt
    if heading > math.pi or heading <= -math.pi:
        heading = wrap_angle(heading)
    speed = state.speed + accel * cfg.dt
    speed = 0.0 if speed < 0.0 else (cfg.max_speed if speed > cfg.max_speed else speed)
    return VehicleState(x, y, heading, speed)


# ---------------------------------------------------------------------------
# episode execution

class Observation:
    """What a controller sees at a control tick.

    ``scan`` is computed on first access so that controllers that do not
    use the range finder (the PID expert) never pay for ray casting.
    """

    __slots__ = ("t", "state", "frame", "_scan_fn", "_scan")

    def __init__(self, t: float, state: VehicleState, frame: TrackFrame,
                 scan_fn: Callable[[], np.ndarray]):
        self.t = t
        self.state = state
        self.frame = frame
        self._scan_fn = scan_fn
        self._scan: Optional[np.ndarray] = None

    @property
    def scan(self) -> np.ndarray:
        if self._scan is None:
            self._scan = self._scan_fn()
        return self._scan


@dataclass(frozen=True)
class Decision:
    """Controller output for one control tick, plus optional diagnostics."""

    command: ControlCommand
    source: str = "learned"
    shat: float = math.nan   # raw regressor prediction (applied steer may differ)
    sigma: float = math.nan
    cov: float = math.nan
    odd_count: int = -1      # -1 marks "not an ensemble prediction"


class Controller(Protocol):
    def reset(self) -> None: ...

    def act(self, obs: Observation) -> Decision: ...


@dataclass(frozen=True)
class EpisodeLimits:
    laps: int = 1
    max_steps: int = 250_000

    def __post_init__(self) -> None:
        if self.laps < 1 or self.max_steps < 1:
            raise ValueError("laps and max_steps must be >= 1")


LOG_COLUMNS = ("t", "x", "y", "heading", "speed", "steer", "accel", "brake", "s", "d")
EXTRA_COLUMNS = ("sigma", "cov", "odd_count")


@dataclass
class TrajectoryLog:
    """Per-step episode record plus the terminal event.

    ``data`` holds one float64 column per entry of ``LOG_COLUMNS`` and
    ``EXTRA_COLUMNS``; ``sources`` is the per-step control source tag.
    """

    dt: float
    data: dict[str, np.ndarray]
    sources: list[str]
    event: str                    # lap_complete | off_track | timeout | aborted
    detail: str
    lap_fraction: float
    track_name: str

    @property
    def steps(self) -> int:
        return len(self.sources)

    def summary(self) -> dict:
        sel = np.isfinite(self.data["cov"])
        return {
            "track": self.track_name,
            "event": self.event,
            "detail": self.detail,
            "lap_fraction": self.lap_fraction,
            "steps": self.steps,
            "duration_s": self.steps * self.dt,
            "max_abs_d": float(np.abs(self.data["d"]).max()) if self.steps else 0.0,
            "mean_cov": float(self.data["cov"][sel].mean()) if sel.any() else None,
            "max_cov": float(self.data["cov"][sel].max()) if sel.any() else None,
        }

    def write_csv(self, path) -> None:
        cols = LOG_COLUMNS + EXTRA_COLUMNS
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols[:10] + ("source",) + cols[10:])
            for k in range(self.steps):
                row = [repr(self.data[c][k]) for c in LOG_COLUMNS]
                row.append(self.sources[k])
                row += [repr(self.data[c][k]) for c in EXTRA_COLUMNS]
                w.writerow(row)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for c in LOG_COLUMNS + EXTRA_COLUMNS:
            h.update(self.data[c].tobytes())
        h.update("\n".join(self.sources).encode())
        h.update(f"{self.event}|{self.lap_fraction!r}".encode())
        return h.hexdigest()


class _LogBuilder:
    def __init__(self) -> None:
        self.cols: dict[str, list[float]] = {c: [] for c in LOG_COLUMNS + EXTRA_COLUMNS}
        self.sources: list[str] = []

    def add(self, t: float, st: VehicleState, cmd: ControlCommand,
            frame: TrackFrame, dec: Decision) -> None:
        c = self.cols
        c["t"].append(t)
        c["x"].append(st.x)
        c["y"].append(st.y)
        c["heading"].append(st.heading)
        c["speed"].append(st.speed)
        c["steer"].append(cmd.steer)
        c["accel"].append(cmd.accel)
        c["brake"].append(cmd.brake)
        c["s"].append(frame.s)
        c["d"].append(frame.d)
        c["sigma"].append(dec.sigma)
        c["cov"].append(dec.cov)
        c["odd_count"].append(float(dec.odd_count))
        self.sources.append(dec.source)

    def build(self, dt: float, event: str, detail: str, lap_fraction: float,
              track_name: str) -> TrajectoryLog:
        data = {c: np.asarray(v, dtype=np.float64) for c, v in self.cols.items()}
        return TrajectoryLog(dt=dt, data=data, sources=self.sources, event=event,
                             detail=detail, lap_fraction=lap_fraction,
                             track_name=track_name)


class EpisodeStepper:
    """Incremental episode execution: one control tick at a time.

    Batch runs (``run_episode``) and the live telemetry loop share this
    core, so both produce identical trajectories for identical inputs. The
    car starts on the centerline at ``start_s``, aligned with the tangent.
    """

    def __init__(
        self,
        track: TrackGeometry,
        controller: Controller,
        sim_cfg: SimConfig,
        lidar_cfg,
        limits: EpisodeLimits = EpisodeLimits(),
        control_hz: float = 50.0,
        initial_speed: float = 0.0,
        start_s: float = 0.0,
        tick_hook: Optional[Callable[[Observation, ControlCommand], None]] = None,
    ):
        from .lidar import scan as lidar_scan  # local import to avoid a cycle

        self._scan = lidar_scan
        self.substeps = round(1.0 / (sim_cfg.dt * control_hz))
        if self.substeps < 1 or abs(self.substeps * sim_cfg.dt * control_hz - 1.0) > 1e-9:
            raise ValueError(
                f"control_hz={control_hz} must divide the physics rate {1.0 / sim_cfg.dt}"
            )
        self.track = track
        self.controller = controller
        self.sim_cfg = sim_cfg
        self.lidar_cfg = lidar_cfg
        self.limits = limits
        self.tick_hook = tick_hook

        controller.reset()
        self._cursor = track.cursor()
        p0 = track.point_at(start_s)
        self.state = VehicleState(float(p0[0]), float(p0[1]),
                                  track.heading_at(start_s), float(initial_speed))
        self.frame = self._cursor.project((self.state.x, self.state.y))
        self._log = _LogBuilder()
        self._goal = limits.laps * track.total_length
        self._half = 0.5 * track.total_length
        self._progress = 0.0
        self._best_progress = 0.0
        self._prev_s = self.frame.s
        self.k = 0                      # physics steps taken
        self.decision = Decision(ControlCommand())
        self.done = False
        self.event = "timeout"
        self.detail = f"step budget {limits.max_steps} exhausted"

    @property
    def t(self) -> float:
        return self.k * self.sim_cfg.dt

    @property
    def lap_fraction(self) -> float:
        return max(0.0, self._best_progress) / self.track.total_length

    def tick(self) -> Optional[Observation]:
        """One control decision plus its physics sub-steps.

        Returns the observation the controller acted on, or None if the
        episode had already ended.
        """
        if self.done:
            return None
        state, frame = self.state, self.frame
        obs = Observation(
            self.t, state, frame,
            lambda: self._scan(state, self.track, self.lidar_cfg, frame=frame),
        )
        self.decision = self.controller.act(obs)
        if not self.decision.command.is_finite():
            self.done = True
            self.event, self.detail = "aborted", f"non-finite command at t={self.t:.3f}"
            return obs
        cmd = self.decision.command.clamped()
        if self.tick_hook is not None:
            self.tick_hook(obs, cmd)

        for _ in range(self.substeps):
            self._log.add(self.t, self.state, cmd, self.frame, self.decision)
            self.state = step(self.state, cmd, self.sim_cfg)
            self.k += 1
            self.frame = self._cursor.project((self.state.x, self.state.y))
            ds = (self.frame.s - self._prev_s + self._half) % self.track.total_length \
                - self._half
            self._progress += ds
            self._prev_s = self.frame.s
            if self._progress > self._best_progress:
                self._best_progress = self._progress

            if abs(self.frame.d) >= self.track.half_width:
                self.done = True
                self.event = "off_track"
                self.detail = f"|d|={abs(self.frame.d):.2f} m at s={self.frame.s:.1f}"
                return obs
            if self._progress >= self._goal:
                self.done = True
                self.event = "lap_complete"
                self.detail = f"{self.limits.laps} lap(s) done"
                return obs
            if self.k >= self.limits.max_steps:
                self.done = True   # event/detail already default to timeout
                return obs
        return obs

    def finish(self) -> TrajectoryLog:
        return self._log.build(self.sim_cfg.dt, self.event, self.detail,
                               self.lap_fraction, self.track.name)


def run_episode(
    track: TrackGeometry,
    controller: Controller,
    sim_cfg: SimConfig,
    lidar_cfg,
    limits: EpisodeLimits = EpisodeLimits(),
    control_hz: float = 50.0,
    initial_speed: float = 0.0,
    start_s: float = 0.0,
    tick_hook: Optional[Callable[[Observation, ControlCommand], None]] = None,
) -> TrajectoryLog:
    """Run one episode until lap completion, off-track, timeout or abort.

    ``tick_hook`` (if given) is called after each control tick with the
    observation and the clamped command actually applied; episodes are
    bitwise deterministic for identical inputs.
    """
    stepper = EpisodeStepper(track, controller, sim_cfg, lidar_cfg, limits,
                             control_hz, initial_speed, start_s, tick_hook)
    while not stepper.done:
        stepper.tick()
    return stepper.finish()
