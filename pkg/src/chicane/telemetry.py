"""Live episode streaming over a websocket, with human takeover.

One simulation task advances physics one control tick at a time and
broadcasts a JSON frame per tick (the control rate, 50 Hz by default, is
the frame rate). Clients receive a handshake with the track geometry, then
frames; they may send ``take_control`` / ``steer`` / ``release`` messages.
The first client to take control owns the wheel until it releases or
disconnects; override steering is applied on the next physics step after
receipt. Slow consumers drop old frames (keep-latest), never stall the sim.

Wire schema (all messages are JSON text):

  server -> client
    {"type": "handshake", "track": {...}, "beam_count", "frame_hz",
     "cov_on", "cov_off", "target_speed"}
    {"type": "frame", "t", "x", "y", "heading", "speed", "steer", "accel",
     "brake", "lidar": [...], "shat", "sigma", "cov", "odd_count",
     "total_odd_counts", "interventions", "source", "lap_fraction"}
    {"type": "event", "event", "detail", "lap_fraction"}

  client -> server
    {"type": "take_control"}
    {"type": "steer", "value": <float in [-1, 1]>}
    {"type": "release"}
"""

from __future__ import annotations

import asyncio
import contextlib
import json
import math
import time
from collections import deque
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.staticfiles import StaticFiles

from .config import ExperimentConfig
from .sim import EpisodeLimits, EpisodeStepper
from .supervisor import SupervisorConfig
from .track import resolve_track


class LiveSession:
    """Owns the episode stepper, the override state and frame fan-out."""

    def __init__(
        self,
        cfg: ExperimentConfig,
        track_ref: str,
        model,
        supervisor: Optional[SupervisorConfig] = None,
        time_scale: float = 1.0,
        out_dir: Optional[Path] = None,
        episode_laps: Optional[int] = None,
    ):
        from .experiment import make_controller

        self.cfg = cfg
        self.track = resolve_track(track_ref)
        self.supervisor = supervisor
        self.time_scale = time_scale
        self.out_dir = Path(out_dir) if out_dir else None

        self.override_steer: Optional[float] = None
        self.controlling_client: Optional[int] = None
        self.malformed_count = 0
        self.subscribers: dict[int, deque] = {}
        self._next_client = 0
        self.finished = asyncio.Event()
        self.log = None

        self.controller = make_controller(
            model, cfg, track=self.track, supervisor=supervisor,
            override_provider=lambda: self.override_steer,
        )
        laps = episode_laps if episode_laps is not None else cfg.episode_laps
        self.stepper = EpisodeStepper(
            self.track, self.controller, cfg.sim, cfg.lidar,
            limits=EpisodeLimits(
                laps=laps,
                max_steps=int(2.0 * laps * self.track.total_length
                              / cfg.target_speed_mps / cfg.sim.dt)),
            control_hz=cfg.control_hz,
            initial_speed=cfg.target_speed_mps,
        )

    # -- client bookkeeping --------------------------------------------------

    def subscribe(self) -> tuple[int, deque]:
        cid = self._next_client
        self._next_client += 1
        q: deque = deque(maxlen=8)  # keep-latest: slow clients drop old frames
        self.subscribers[cid] = q
        return cid, q

    def unsubscribe(self, cid: int) -> None:
        self.subscribers.pop(cid, None)
        if self.controlling_client == cid:
            # revert to supervisor arbitration within one step
            self.controlling_client = None
            self.override_steer = None

    def handle_message(self, cid: int, raw: str) -> None:
        try:
            msg = json.loads(raw)
            kind = msg["type"]
        except (json.JSONDecodeError, TypeError, KeyError):
            self.malformed_count += 1
            return
        if kind == "take_control":
            if self.controlling_client is None:
                self.controlling_client = cid
                self.override_steer = 0.0
        elif kind == "steer":
            if self.controlling_client == cid:
                try:
                    v = float(msg["value"])
                except (KeyError, TypeError, ValueError):
                    self.malformed_count += 1
                    return
                if not math.isfinite(v):
                    self.malformed_count += 1
                    return
                self.override_steer = min(max(v, -1.0), 1.0)
        elif kind == "release":
            if self.controlling_client == cid:
                self.controlling_client = None
                self.override_steer = None
        else:
            self.malformed_count += 1

    # -- messages ------------------------------------------------------------

    def handshake(self) -> dict:
        return {
            "type": "handshake",
            "track": self.track.to_dict(),
            "beam_count": self.cfg.lidar.beam_count,
            "frame_hz": self.cfg.control_hz,
            "cov_on": self.supervisor.cov_on if self.supervisor else None,
            "cov_off": self.supervisor.cov_off if self.supervisor else None,
            "target_speed": self.cfg.target_speed_mps,
        }

    def _frame(self, obs, scan) -> dict:
        dec = self.stepper.decision
        stats = getattr(self.controller, "stats", None)
        return {
            "type": "frame",
            "t": obs.t,
            "x": obs.state.x, "y": obs.state.y,
            "heading": obs.state.heading, "speed": obs.state.speed,
            "steer": dec.command.steer, "accel": dec.command.accel,
            "brake": dec.command.brake,
            "lidar": [round(v, 3) for v in scan.tolist()] if scan is not None else None,
            "shat": None if math.isnan(dec.shat) else dec.shat,
            "sigma": None if math.isnan(dec.sigma) else dec.sigma,
            "cov": None if math.isnan(dec.cov) else dec.cov,
            "odd_count": None if dec.odd_count < 0 else dec.odd_count,
            "total_odd_counts": stats.total_odd_counts if stats else None,
            "interventions": stats.interventions if stats else None,
            "source": dec.source,
            "lap_fraction": self.stepper.lap_fraction,
        }

    def _broadcast(self, msg: dict) -> None:
        for q in self.subscribers.values():
            q.append(msg)

    # -- the loop ------------------------------------------------------------

    async def run(self) -> None:
        """Advance the episode, pacing to wall clock when time_scale > 0."""
        tick_dt = 1.0 / self.cfg.control_hz
        t0 = time.monotonic()
        sim_elapsed = 0.0
        try:
            while not self.stepper.done:
                obs = self.stepper.tick()
                if obs is None:
                    break
                self._broadcast(self._frame(obs, obs.scan))
                sim_elapsed += tick_dt
                if self.time_scale > 0:
                    target = t0 + sim_elapsed / self.time_scale
                    delay = target - time.monotonic()
                    await asyncio.sleep(delay if delay > 0 else 0)
                else:
                    await asyncio.sleep(0)
            self.log = self.stepper.finish()
            self._broadcast({
                "type": "event",
                "event": self.log.event,
                "detail": self.log.detail,
                "lap_fraction": self.log.lap_fraction,
            })
            if self.out_dir is not None:
                self.out_dir.mkdir(parents=True, exist_ok=True)
                self.log.write_csv(self.out_dir / "live_log.csv")
                summary = self.log.summary()
                stats = getattr(self.controller, "stats", None)
                if stats is not None:
                    summary["run_stats"] = stats.to_dict()
                (self.out_dir / "live_summary.json").write_text(
                    json.dumps(summary, sort_keys=True, indent=1))
        finally:
            self.finished.set()


def create_app(session: LiveSession) -> FastAPI:
    app = FastAPI(title="chicane telemetry")
    app.state.session = session

    @app.on_event("startup")
    async def _start() -> None:
        app.state.sim_task = asyncio.create_task(session.run())

    @app.on_event("shutdown")
    async def _stop() -> None:
        task = getattr(app.state, "sim_task", None)
        if task is not None:
            task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await task

    @app.get("/status")
    async def status() -> dict:
        return {
            "done": session.stepper.done,
            "t": session.stepper.t,
            "lap_fraction": session.stepper.lap_fraction,
            "clients": len(session.subscribers),
            "malformed": session.malformed_count,
        }

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket) -> None:
        await ws.accept()
        cid, q = session.subscribe()
        await ws.send_text(json.dumps(session.handshake()))

        async def pump_out() -> None:
            while True:
                while q:
                    await ws.send_text(json.dumps(q.popleft()))
                if session.finished.is_set() and not q:
                    break
                await asyncio.sleep(0.002)

        sender = asyncio.create_task(pump_out())
        try:
            while True:
                raw = await ws.receive_text()
                session.handle_message(cid, raw)
        except WebSocketDisconnect:
            pass
        finally:
            session.unsubscribe(cid)
            sender.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await sender

    return app


def mount_ui(app: FastAPI, dist_dir: Path) -> None:
    """Serve the cockpit UI build at / when it exists."""
    if dist_dir.is_dir():
        app.mount("/", StaticFiles(directory=dist_dir, html=True), name="ui")


def serve(session: LiveSession, host: str = "127.0.0.1", port: int = 8700,
          ui_dir: Optional[Path] = None) -> None:
    import uvicorn

    app = create_app(session)
    if ui_dir is not None:
        mount_ui(app, ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
