"""Simulated LIDAR range-finder suite.

A scan is the controller's whole observation vector: one distance per beam,
beams evenly spread over the front half-plane of the car. Scans are
noise-free by default; a seedable Gaussian noise hook exists for robustness
experiments only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sim import VehicleState
from .track import OffCorridorError, TrackFrame, TrackGeometry


@dataclass(frozen=True)
class LidarConfig:
    beam_count: int = 19
    max_range: float = 200.0       # m
    noise_std: float = 0.0         # m; 0 disables the noise hook
    noise_seed: int = 0
    # beam angles relative to the heading, strictly increasing
    angles: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.beam_count < 3 or self.beam_count % 2 == 0:
            raise ValueError("beam_count must be odd and >= 3 (centered forward beam)")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        object.__setattr__(
            self,
            "angles",
            np.linspace(-np.pi / 2, np.pi / 2, self.beam_count),
        )


def noise_rng(cfg: LidarConfig) -> np.random.Generator | None:
    return np.random.default_rng(cfg.noise_seed) if cfg.noise_std > 0 else None


def scan(
    state: VehicleState,
    track: TrackGeometry,
    cfg: LidarConfig,
    frame: TrackFrame | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Cast all beams from the car pose and return their distances.

    Each distance is in (0, max_range]. Raises ``OffCorridorError`` when the
    car is not strictly inside the corridor (the episode should already have
    terminated by then).
    """
    if frame is None:
        frame = track.project((state.x, state.y))
    if abs(frame.d) >= track.half_width:
        raise OffCorridorError(
            f"scan undefined off-track (|d|={abs(frame.d):.3f} m)"
        )
    hdg = state.heading + cfg.angles
    dirs = np.column_stack([np.cos(hdg), np.sin(hdg)])
    dist = track.rays_to_edge((state.x, state.y), dirs, cfg.max_range, frame=frame)
    if rng is not None and cfg.noise_std > 0:
        dist = dist + rng.normal(0.0, cfg.noise_std, size=dist.shape)
        dist = np.clip(dist, 1e-6, cfg.max_range)
    return dist
