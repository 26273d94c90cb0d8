"""Experiment configuration.

One JSON file pins everything an experiment needs: physics, sensor layout,
expert tuning, model hyperparameters, track presets, data budgets and seeds.
The bundled ``reference`` config reproduces the README table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .forest import ForestConfig
from .lidar import LidarConfig
from .mlp import TrainConfig
from .pid import ExpertConfig, PidGains
from .sim import SimConfig


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    sim: SimConfig
    lidar: LidarConfig
    expert: ExpertConfig
    forest: ForestConfig
    mlp: TrainConfig
    target_speed_mps: float = 26.82     # 60 mph
    control_hz: float = 50.0
    record_hz: float = 50.0
    train_track: str = "train-a"
    eval_tracks: tuple[str, ...] = ("train-a", "eval-b")
    collect_laps: int = 3
    collect_seed: int = 0
    sizes: tuple[int, ...] = (600, 2400, 9600)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    episode_laps: int = 1
    supervisor_quantile: float = 0.999
    supervisor_dwell: int = 10
    cov_eps: float = 0.01

    def __post_init__(self) -> None:
        if len(self.seeds) < 1:
            raise ValueError("need at least one seed")
        if any(s < 1 for s in self.sizes):
            raise ValueError("training sizes must be >= 1")

    def episode_max_steps(self, track_length: float) -> int:
        # generous budget: 2x the nominal lap time at target speed
        nominal = self.episode_laps * track_length / self.target_speed_mps
        return int(2.0 * nominal / self.sim.dt)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "target_speed_mps": self.target_speed_mps,
            "control_hz": self.control_hz,
            "record_hz": self.record_hz,
            "train_track": self.train_track,
            "eval_tracks": list(self.eval_tracks),
            "collect_laps": self.collect_laps,
            "collect_seed": self.collect_seed,
            "sizes": list(self.sizes),
            "seeds": list(self.seeds),
            "episode_laps": self.episode_laps,
            "supervisor_quantile": self.supervisor_quantile,
            "supervisor_dwell": self.supervisor_dwell,
            "cov_eps": self.cov_eps,
            "sim": {
                "dt": self.sim.dt, "wheelbase": self.sim.wheelbase,
                "max_wheel_angle": self.sim.max_wheel_angle,
                "max_accel": self.sim.max_accel, "max_decel": self.sim.max_decel,
                "max_speed": self.sim.max_speed,
            },
            "lidar": {
                "beam_count": self.lidar.beam_count,
                "max_range": self.lidar.max_range,
            },
            "expert": {
                "steer_gains": _gains_dict(self.expert.steer_gains),
                "speed_gains": _gains_dict(self.expert.speed_gains),
                "heading_weight": self.expert.heading_weight,
                "lookahead_m": self.expert.lookahead_m,
            },
            "forest": {
                "n_trees": self.forest.n_trees,
                "bootstrap_size": self.forest.bootstrap_size,
                "min_samples_split": self.forest.min_samples_split,
                "max_features_fraction": self.forest.max_features_fraction,
                "min_impurity_decrease": self.forest.min_impurity_decrease,
                "seed": self.forest.seed,
            },
            "mlp": {
                "max_epochs": self.mlp.max_epochs, "val_fraction": self.mlp.val_fraction,
                "patience": self.mlp.patience, "batch_size": self.mlp.batch_size,
                "learning_rate": self.mlp.learning_rate, "beta1": self.mlp.beta1,
                "beta2": self.mlp.beta2, "adam_eps": self.mlp.adam_eps,
                "improve_tol": self.mlp.improve_tol, "seed": self.mlp.seed,
            },
        }


def _gains_dict(g: PidGains) -> dict:
    return {"kp": g.kp, "ki": g.ki, "kd": g.kd,
            "integral_limit": g.integral_limit, "output_limit": g.output_limit}


def config_from_dict(obj: dict) -> ExperimentConfig:
    exp = obj.get("expert", {})
    return ExperimentConfig(
        name=obj.get("name", "custom"),
        sim=SimConfig(**obj.get("sim", {})),
        lidar=LidarConfig(**obj.get("lidar", {})),
        expert=ExpertConfig(
            steer_gains=PidGains(**exp["steer_gains"]) if "steer_gains" in exp
            else ExpertConfig().steer_gains,
            speed_gains=PidGains(**exp["speed_gains"]) if "speed_gains" in exp
            else ExpertConfig().speed_gains,
            heading_weight=exp.get("heading_weight", ExpertConfig().heading_weight),
            lookahead_m=exp.get("lookahead_m", ExpertConfig().lookahead_m),
        ),
        forest=ForestConfig(**obj.get("forest", {})),
        mlp=TrainConfig(**obj.get("mlp", {})),
        target_speed_mps=obj.get("target_speed_mps", 26.82),
        control_hz=obj.get("control_hz", 50.0),
        record_hz=obj.get("record_hz", 50.0),
        train_track=obj.get("train_track", "train-a"),
        eval_tracks=tuple(obj.get("eval_tracks", ("train-a", "eval-b"))),
        collect_laps=obj.get("collect_laps", 3),
        collect_seed=obj.get("collect_seed", 0),
        sizes=tuple(obj.get("sizes", (600, 2400, 9600))),
        seeds=tuple(obj.get("seeds", (0, 1, 2, 3, 4))),
        episode_laps=obj.get("episode_laps", 1),
        supervisor_quantile=obj.get("supervisor_quantile", 0.999),
        supervisor_dwell=obj.get("supervisor_dwell", 10),
        cov_eps=obj.get("cov_eps", 0.01),
    )


def load_config(ref: str | Path = "reference") -> ExperimentConfig:
    """Load an experiment config from a bundled name or a JSON file path."""
    p = Path(ref)
    if p.suffix == ".json" and p.exists():
        return config_from_dict(json.loads(p.read_text()))
    try:
        text = resources.files("chicane.configs").joinpath(f"{ref}.json").read_text()
    except FileNotFoundError as exc:
        raise FileNotFoundError(
            f"no such config: {ref!r} (not a file, not a bundled name)"
        ) from exc
    return config_from_dict(json.loads(text))
