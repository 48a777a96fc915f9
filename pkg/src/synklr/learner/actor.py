"""Policies and the episode loop that turns them into trajectories."""

from __future__ import annotations

import random
from typing import Optional, Sequence

from ..env_core import AOHistory, AOHStep, EnvInterface, Trajectory, slot_encoding
from .qfunction import QFunction


def decision_key(prev_frames: Sequence[bytes], obs: bytes, num_actions: int, horizon: int) -> bytes:
    """History encoding at decision time: earlier frames with their actions plus
    the current observation with no action yet. Same bytes as ``encode_aoh``."""
    current = slot_encoding(obs, None, num_actions)
    if horizon == 1:
        return current
    width = len(current)
    tail = list(prev_frames[-(horizon - 1):])
    pad = bytes(width * (horizon - 1 - len(tail)))
    return pad + b"".join(tail) + current


def history_keys(aoh: AOHistory, horizon: int) -> list[bytes]:
    """Decision-time key for every frame of a recorded history."""
    A = aoh.num_actions
    frames: list[bytes] = []
    keys = []
    for s in aoh.steps:
        keys.append(decision_key(frames, s.obs, A, horizon))
        frames.append(slot_encoding(s.obs, s.action, A))
    return keys


class Policy:
    """Base policy. ``act`` receives the decision key, legal actions and the env."""

    horizon: int = 1
    uses_key: bool = True
    name: str = "policy"

    def begin_episode(self, seat: int) -> None:
        pass

    def act(self, key: Optional[bytes], legal: list[int], rng: random.Random,
            env: EnvInterface, player: int) -> int:
        raise NotImplementedError


class UniformRandomPolicy(Policy):
    """Uniform over legal actions: the shared level-0 partner."""

    uses_key = False
    name = "uniform"

    def act(self, key, legal, rng, env, player):
        return legal[int(rng.random() * len(legal))]


class GreedyQPolicy(Policy):
    def __init__(self, q: QFunction, name: str = "greedy"):
        self.q = q
        self.horizon = q.horizon
        self.name = name

    def act(self, key, legal, rng, env, player):
        return self.q.greedy(key, legal)


class ScriptedPolicy(Policy):
    """Picks the first legal action accepted by ``rule`` (falls back to legal[0])."""

    uses_key = False

    def __init__(self, rule, name: str = "scripted"):
        self.rule = rule
        self.name = name

    def act(self, key, legal, rng, env, player):
        for a in legal:
            if self.rule(env, player, a):
                return a
        return legal[0]


def run_actor(
    env: EnvInterface,
    policies: Sequence[Policy],
    epsilons: Sequence[float],
    seed: int,
    max_length: int = 80,
    action_log: Optional[list] = None,
) -> Trajectory:
    """Play one full episode with per-seat epsilon-greedy over legal actions."""
    n = env.num_players
    if len(policies) != n or len(epsilons) != n:
        raise ValueError("need one policy and one epsilon per seat")
    rng = random.Random(seed)
    env.reset(rng.getrandbits(64))
    A = env.action_space_size
    steps: list[list[AOHStep]] = [[] for _ in range(n)]
    frames: list[list[bytes]] = [[] for _ in range(n)]
    pending = [None] * n  # reward accrued since the seat's last action
    rewards: list[float] = []
    for p, pol in enumerate(policies):
        pol.begin_episode(p)
    done = False
    while not done:
        p = env.current_player
        obs = env.observe(p)
        legal = env.legal_actions(p)
        mask = bytearray(A)
        for a in legal:
            mask[a] = 1
        pol = policies[p]
        if epsilons[p] > 0.0 and rng.random() < epsilons[p]:
            action = legal[int(rng.random() * len(legal))]
        else:
            key = decision_key(frames[p], obs, A, pol.horizon) if pol.uses_key else None
            action = pol.act(key, legal, rng, env, p)
        steps[p].append(AOHStep(obs, bytes(mask), action, pending[p]))
        frames[p].append(slot_encoding(obs, action, A))
        pending[p] = 0.0
        if action_log is not None:
            action_log.append((p, action))
        _, reward, done = env.step(action)
        rewards.append(reward)
        for q in range(n):
            if pending[q] is not None:
                pending[q] += reward
    histories = []
    empty_mask = bytes(A)
    for p in range(n):
        steps[p].append(AOHStep(env.observe(p), empty_mask, None, pending[p]))
        histories.append(AOHistory(p, A, tuple(steps[p]), max_length))
    return Trajectory(
        aoh_per_agent=tuple(histories),
        rewards=tuple(rewards),
        terminal_reason=env.terminal_reason,
        padded_length=max_length,
        env_id=env.env_id,
        final_score=env.final_score(),
    )
