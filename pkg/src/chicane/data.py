"""Labeled LIDAR-to-steering datasets.

A dataset pairs range-finder scans (features) with the steering the PID
expert actually applied (labels). Persistence is a CSV of full-precision
decimals plus a JSON metadata sidecar; the loader validates the beam count
against the sidecar so models and sensors can never silently disagree.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lidar import LidarConfig
from .sim import EpisodeLimits, SimConfig, run_episode
from .track import TrackGeometry


class CollectionError(RuntimeError):
    """The expert failed to complete the requested laps."""


class DatasetFormatError(ValueError):
    """A dataset file violates the on-disk contract."""


def sidecar_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".meta.json")


@dataclass
class Dataset:
    """Feature matrix X (n, beam_count), labels y (n,), and provenance."""

    X: np.ndarray
    y: np.ndarray
    meta: dict

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise DatasetFormatError("X must be (n, beams) with matching labels")
        if len(self.y) == 0:
            raise DatasetFormatError("empty dataset")
        if self.X.shape[1] != self.meta.get("beam_count"):
            raise DatasetFormatError(
                f"{self.X.shape[1]} feature columns but metadata says "
                f"beam_count={self.meta.get('beam_count')}"
            )
        if not np.isfinite(self.X).all() or (self.X <= 0).any():
            raise DatasetFormatError("scan distances must be finite and > 0")
        if not np.isfinite(self.y).all() or (np.abs(self.y) > 1.0).any():
            raise DatasetFormatError("steering labels must be finite and in [-1, 1]")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def beam_count(self) -> int:
        return self.X.shape[1]

    def split(self, train_fraction: float, seed: int) -> tuple["Dataset", "Dataset"]:
        """Random disjoint (train, test) partition; train gets ceil(f*n) rows."""
        if not 0.0 < train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
        n = len(self)
        perm = np.random.default_rng(seed).permutation(n)
        n_train = math.ceil(train_fraction * n)
        tr = np.sort(perm[:n_train])
        te = np.sort(perm[n_train:])
        return self._take(tr), self._take(te)

    def subset(self, size: int, seed: int) -> "Dataset":
        """Deterministic random subset used for the training-budget sweep."""
        if not 1 <= size <= len(self):
            raise ValueError(f"subset size {size} not in [1, {len(self)}]")
        perm = np.random.default_rng(seed).permutation(len(self))
        return self._take(np.sort(perm[:size]))

    def _take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], dict(self.meta))

    def save(self, csv_path) -> None:
        csv_path = Path(csv_path)
        header = [f"d{i}" for i in range(self.beam_count)] + ["steer"]
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for xi, yi in zip(self.X, self.y):
                w.writerow([repr(v) for v in xi] + [repr(yi)])
        sidecar_path(csv_path).write_text(json.dumps(self.meta, sort_keys=True))

    @classmethod
    def load(cls, csv_path) -> "Dataset":
        csv_path = Path(csv_path)
        side = sidecar_path(csv_path)
        if not side.exists():
            raise DatasetFormatError(f"missing metadata sidecar: expected {side}")
        meta = json.loads(side.read_text())
        with open(csv_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            beams = meta.get("beam_count")
            expected = [f"d{i}" for i in range(beams)] + ["steer"]
            if header != expected:
                raise DatasetFormatError(
                    f"{csv_path}: header does not match beam_count={beams}"
                )
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != beams + 1:
                    raise DatasetFormatError(
                        f"{csv_path}:{lineno}: expected {beams + 1} columns, got {len(row)}"
                    )
                try:
                    rows.append([float(v) for v in row])
                except ValueError as exc:
                    raise DatasetFormatError(f"{csv_path}:{lineno}: {exc}") from exc
        if not rows:
            raise DatasetFormatError(f"{csv_path}: no data rows")
        arr = np.asarray(rows, dtype=np.float64)
        return cls(arr[:, :-1], arr[:, -1], meta)


def collect(
    track: TrackGeometry,
    expert,
    laps: int,
    sim_cfg: SimConfig,
    lidar_cfg: LidarConfig,
    target_speed: float,
    record_hz: float = 50.0,
    seed: int = 0,
) -> Dataset:
    """Drive the expert for ``laps`` recorded laps and harvest (scan, steer).

    Lap 0 is a warm-up and is discarded. One sample is recorded per control
    tick; the label is the clamped steering actually applied. Deterministic
    per (track, expert, config, seed).
    """
    if laps < 1:
        raise ValueError("laps must be >= 1 (empty datasets are not allowed)")

    X: list[np.ndarray] = []
    y: list[float] = []
    total = track.total_length
    half = 0.5 * total
    tracker = {"progress": 0.0, "prev_s": 0.0}

    def tick_hook(obs, cmd) -> None:
        ds = (obs.frame.s - tracker["prev_s"] + half) % total - half
        tracker["progress"] += ds
        tracker["prev_s"] = obs.frame.s
        if tracker["progress"] >= total:  # warm-up lap over
            X.append(obs.scan)
            y.append(cmd.steer)

    # generous budget: laps+1 laps plus 30% slack at the target pace
    max_steps = int((laps + 1) * 1.3 * total / max(target_speed, 1.0) / sim_cfg.dt)
    log = run_episode(
        track,
        expert,
        sim_cfg,
        lidar_cfg,
        limits=EpisodeLimits(laps=laps + 1, max_steps=max_steps),
        control_hz=record_hz,
        initial_speed=target_speed,
        tick_hook=tick_hook,
    )
    if log.event != "lap_complete":
        raise CollectionError(
            f"expert did not complete collection: {log.event} ({log.detail}) "
            f"after {log.lap_fraction:.2f} laps"
        )
    meta = {
        "track": track.name,
        "beam_count": lidar_cfg.beam_count,
        "max_range_m": lidar_cfg.max_range,
        "record_hz": record_hz,
        "target_speed_mps": target_speed,
        "seed": seed,
        "laps": laps,
    }
    return Dataset(np.asarray(X), np.asarray(y), meta)
