from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from typing import Any, Mapping


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LearnerConfig:
    """Q-learning hyper-parameters. Defaults are the full-scale Hanabi values;
    desk presets override the budget-sensitive ones."""

    gamma: float = 0.999
    n_step: int = 3
    target_sync_interval: int = 2500
    batch_size: int = 128
    learning_rate: float = 6.25e-5
    adam_eps: float = 1.5e-5
    gradient_clip: float = 5.0
    replay_capacity: int = 2**17
    burn_in_frames: int = 10000
    priority_exponent: float = 0.9
    importance_weight_exponent: float = 0.6
    max_trajectory_length: int = 80
    epsilon_alpha: float = 0.1
    epsilon_beta: float = 7.0
    num_actors: int = 80
    # artifact plumbing below: function approximator and loop cadence
    variant: str = "tabular"
    hidden_sizes: tuple[int, ...] = (64, 64)
    horizon: int = 1
    sim_sync_interval: int = 10
    episodes_per_step: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))
        bad = []
        if not 0.0 < self.gamma <= 1.0:
            bad.append("gamma")
        if self.n_step < 1:
            bad.append("n_step")
        if self.target_sync_interval < 1:
            bad.append("target_sync_interval")
        if self.batch_size < 1:
            bad.append("batch_size")
        if self.learning_rate <= 0:
            bad.append("learning_rate")
        if self.replay_capacity < 1:
            bad.append("replay_capacity")
        if self.burn_in_frames < 0:
            bad.append("burn_in_frames")
        if self.num_actors < 2:
            bad.append("num_actors")
        if self.variant not in ("tabular", "mlp"):
            bad.append("variant")
        if self.horizon < 1:
            bad.append("horizon")
        if self.sim_sync_interval < 1:
            bad.append("sim_sync_interval")
        if self.episodes_per_step < 1:
            bad.append("episodes_per_step")
        if bad:
            raise ConfigError(f"invalid learner config keys: {bad}")

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    def digest(self) -> bytes:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.blake2b(blob, digest_size=8).digest()

    @classmethod
    def from_mapping(cls, cfg: Mapping[str, Any]) -> "LearnerConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(cfg) - names)
        if unknown:
            raise ConfigError(f"unknown learner config keys: {unknown}")
        return cls(**cfg)

    def replace(self, **changes) -> "LearnerConfig":
        return dataclasses.replace(self, **changes)


def epsilon_for_actor(i: int, config: LearnerConfig) -> float:
    """Per-actor exploration rate alpha ** (1 + beta * i / (N - 1))."""
    n = config.num_actors
    if n < 2:
        raise ConfigError("num_actors must be >= 2")
    if not 0 <= i < n:
        raise IndexError(f"actor index {i} outside [0, {n})")
    return config.epsilon_alpha ** (1.0 + config.epsilon_beta * i / (n - 1))

