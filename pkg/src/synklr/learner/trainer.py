from __future__ import annotations

import random
from typing import Optional, Sequence

import numpy as np

from ..env_core import EnvInterface, Trajectory, encoding_width
from .actor import GreedyQPolicy, Policy, run_actor
from .config import LearnerConfig, epsilon_for_actor
from .qfunction import Adam, MLPQ, QFunction, TabularQ, make_qfunction
from .replay import PrioritizedReplay
from .targets import ReplayItem, StepResult, gradient_step


class QLearner:
    """Online/target/actor copies of one Q-function plus its replay buffer.

    The actor copy is what simulation uses; it is refreshed from the online
    network every ``sim_sync_interval`` gradient steps, and the target copy
    every ``target_sync_interval`` steps.
    """

    def __init__(self, config: LearnerConfig, num_actions: int, obs_size: int, seed: int):
        self.config = config
        self.num_actions = num_actions
        width = encoding_width(obs_size, num_actions, config.horizon)
        self.online: QFunction = make_qfunction(
            config.variant, num_actions, width, horizon=config.horizon,
            hidden_sizes=config.hidden_sizes, seed=seed,
        )
        self.target = self.online.copy()
        self.actor_q = self.online.copy()
        self.optimizer = (
            Adam(self.online.params, config.learning_rate, config.adam_eps)
            if isinstance(self.online, MLPQ) else None
        )
        self.replay = PrioritizedReplay(
            config.replay_capacity, config.priority_exponent, config.importance_weight_exponent
        )
        self.rng = random.Random(seed)
        self.np_rng = np.random.default_rng(seed)
        self.grad_steps = 0
        self.episodes = 0
        self.actor_refreshes = 0
        self.target_syncs = 0
        self._dirty_actor: set = set()
        self._dirty_target: set = set()
        self.last_result: Optional[StepResult] = None

    # -- acting ---------------------------------------------------------------

    def actor_policy(self) -> GreedyQPolicy:
        return GreedyQPolicy(self.actor_q, name="trainee")

    def next_epsilon(self) -> float:
        i = self.episodes % self.config.num_actors
        return epsilon_for_actor(i, self.config)

    def collect(self, env: EnvInterface, policies: Sequence[Policy], epsilons: Sequence[float],
                seats: Sequence[int]) -> Trajectory:
        traj = run_actor(env, policies, epsilons, self.rng.getrandbits(64), self.config.max_trajectory_length)
        self.episodes += 1
        self.add(traj, seats)
        return traj

    def add(self, traj: Trajectory, seats: Sequence[int]) -> None:
        item = ReplayItem.build(traj, seats, self.config.horizon)
        if item.num_transitions:
            self.replay.add(item, frames=item.num_transitions)

    # -- learning -------------------------------------------------------------

    @property
    def ready(self) -> bool:
        return len(self.replay) > 0 and self.replay.frames_added >= self.config.burn_in_frames

    def train_step(self) -> StepResult:
        batch = self.replay.sample(self.config.batch_size, self.np_rng)
        res = gradient_step(batch.items, batch.weights, self.online, self.target, self.config, self.optimizer)
        self.replay.update_priorities(batch.indices, res.priorities)
        self.grad_steps += 1
        self._dirty_actor |= res.touched_keys
        self._dirty_target |= res.touched_keys
        if self.grad_steps % self.config.target_sync_interval == 0:
            self.sync_target()
        if self.grad_steps % self.config.sim_sync_interval == 0:
            self.refresh_actor()
        self.last_result = res
        return res

    def sync_target(self) -> None:
        self.target = self._sync(self.target, self._dirty_target)
        self._dirty_target = set()
        self.target_syncs += 1

    def refresh_actor(self) -> None:
        self.actor_q = self._sync(self.actor_q, self._dirty_actor)
        self._dirty_actor = set()
        self.actor_refreshes += 1

    def _sync(self, dst: QFunction, dirty: set) -> QFunction:
        if isinstance(self.online, TabularQ):
            dst.copy_keys_from(self.online, dirty)
            return dst
        return self.online.copy()

    # -- persistence ----------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "online": self.online.to_bytes(),
            "target": self.target.to_bytes(),
            "actor": self.actor_q.to_bytes(),
            "optimizer": None if self.optimizer is None else {
                "m": [m.copy() for m in self.optimizer.m],
                "v": [v.copy() for v in self.optimizer.v],
                "t": self.optimizer.t,
            },
            "replay": self.replay.state_dict(),
            "rng": self.rng.getstate(),
            "np_rng": self.np_rng.bit_generator.state,
            "counters": (self.grad_steps, self.episodes, self.actor_refreshes, self.target_syncs),
            "dirty": (set(self._dirty_actor), set(self._dirty_target)),
        }

    def load_state_dict(self, state: dict) -> None:
        from .qfunction import qfunction_from_bytes

        self.online = qfunction_from_bytes(state["online"])
        self.target = qfunction_from_bytes(state["target"])
        self.actor_q = qfunction_from_bytes(state["actor"])
        if state["optimizer"] is not None:
            self.optimizer = Adam(self.online.params, self.config.learning_rate, self.config.adam_eps)
            self.optimizer.m = [m.copy() for m in state["optimizer"]["m"]]
            self.optimizer.v = [v.copy() for v in state["optimizer"]["v"]]
            self.optimizer.t = state["optimizer"]["t"]
        self.replay.load_state_dict(state["replay"])
        self.rng.setstate(state["rng"])
        self.np_rng.bit_generator.state = state["np_rng"]
        self.grad_steps, self.episodes, self.actor_refreshes, self.target_syncs = state["counters"]
        self._dirty_actor, self._dirty_target = (set(s) for s in state["dirty"])
