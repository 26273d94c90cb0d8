"""Runtime arbitration between learned control and its fallbacks.

The learned command drives the car while the ensemble's coefficient of
variation stays low. When it crosses ``cov_on`` the supervisor hands
control to the PID fallback and keeps it there for at least
``min_fallback_steps`` ticks and until the CoV drops below ``cov_off``
(hysteresis prevents source flapping). A human override, when present,
preempts everything for exactly the ticks it is present.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset
from .forest import Forest, PredictionStats
from .sim import ControlCommand


class ControlSource(str, enum.Enum):
    LEARNED = "learned"
    FALLBACK_PID = "fallback_pid"
    HUMAN_OVERRIDE = "human_override"


@dataclass(frozen=True)
class SupervisorConfig:
    cov_on: float                 # enter fallback above this
    cov_off: float                # may return to learned below this
    min_fallback_steps: int = 10  # dwell, in control ticks
    eps: float = 0.01             # CoV regularizer, shared with the forest

    def __post_init__(self) -> None:
        if not 0.0 < self.cov_off < self.cov_on:
            raise ValueError("need 0 < cov_off < cov_on")
        if self.min_fallback_steps < 1:
            raise ValueError("min_fallback_steps must be >= 1")


@dataclass(frozen=True)
class SupervisorState:
    in_fallback: bool = False
    fallback_ticks: int = 0   # ticks spent in the current fallback stint
    prev_source: Optional[ControlSource] = None


def arbitrate(
    stats: PredictionStats,
    learned: ControlCommand,
    fallback: ControlCommand,
    override: Optional[ControlCommand],
    st: SupervisorState,
    cfg: SupervisorConfig,
) -> tuple[ControlCommand, ControlSource, SupervisorState]:
    """Pick the command source for one control tick.

    Pure function of (inputs, state); the returned state carries the
    hysteresis bookkeeping. The human override wins unconditionally and
    does not disturb the learned/fallback hysteresis state.
    """
    if override is not None:
        return override, ControlSource.HUMAN_OVERRIDE, SupervisorState(
            st.in_fallback, st.fallback_ticks, ControlSource.HUMAN_OVERRIDE
        )
    if not st.in_fallback:
        if stats.cov > cfg.cov_on:
            return fallback, ControlSource.FALLBACK_PID, SupervisorState(
                True, 1, ControlSource.FALLBACK_PID
            )
        return learned, ControlSource.LEARNED, SupervisorState(
            False, 0, ControlSource.LEARNED
        )
    if st.fallback_ticks >= cfg.min_fallback_steps and stats.cov < cfg.cov_off:
        return learned, ControlSource.LEARNED, SupervisorState(
            False, 0, ControlSource.LEARNED
        )
    return fallback, ControlSource.FALLBACK_PID, SupervisorState(
        True, st.fallback_ticks + 1, ControlSource.FALLBACK_PID
    )


@dataclass
class RunStats:
    """Fig-4-style accumulators over one supervised episode."""

    steps: int = 0
    interventions: int = 0          # entries into a non-learned source
    total_odd_counts: int = 0
    max_cov: float = 0.0
    steer_series: list = field(default_factory=list)
    sigma_series: list = field(default_factory=list)
    cov_series: list = field(default_factory=list)
    odd_series: list = field(default_factory=list)

    def record(self, stats: PredictionStats, source: ControlSource,
               prev_source: Optional[ControlSource], steer: float) -> None:
        self.steps += 1
        self.total_odd_counts += stats.odd_count
        if stats.cov > self.max_cov:
            self.max_cov = stats.cov
        if source != ControlSource.LEARNED and (
            prev_source is None or prev_source == ControlSource.LEARNED
        ):
            self.interventions += 1
        self.steer_series.append(steer)
        self.sigma_series.append(stats.std)
        self.cov_series.append(stats.cov)
        self.odd_series.append(stats.odd_count)

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "interventions": self.interventions,
            "total_odd_counts": self.total_odd_counts,
            "max_cov": self.max_cov,
        }


def calibrate_threshold(
    forest: Forest, d_val: Dataset, quantile: float = 0.999,
    min_fallback_steps: int = 10,
) -> SupervisorConfig:
    """Derive takeover thresholds from the CoV distribution on clean data.

    ``cov_on`` is the requested quantile of validation CoV (1.0 means the
    maximum); ``cov_off`` is pinned at 60% of ``cov_on``.
    """
    if len(d_val) == 0:
        raise ValueError("validation set is empty")
    covs = np.array([forest.predict_with_stats(x).cov for x in d_val.X])
    if (covs == 0.0).all():
        raise ValueError(
            "all validation CoV are zero; grow the ensemble or the dataset "
            "before calibrating a takeover threshold"
        )
    cov_on = float(np.quantile(covs, quantile))
    return SupervisorConfig(
        cov_on=cov_on, cov_off=0.6 * cov_on,
        min_fallback_steps=min_fallback_steps, eps=forest.eps,
    )
