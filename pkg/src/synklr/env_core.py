"""Turn-based Dec-POMDP plumbing shared by every environment and learner.

Observations are dense 0/1 feature vectors stored as ``bytes`` (one byte per
feature). That makes them immutable, hashable for tabular lookup and cheap to
turn into numpy arrays with ``np.frombuffer``.

Each agent's history only records the frames where that agent acts, plus one
terminal frame. The reward stored on a frame is the common reward accumulated
since the agent's previous action (partner moves included).
"""

from __future__ import annotations

import json
import math
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

DEFAULT_MAX_TRAJECTORY_LENGTH = 80
TRAJECTORY_FORMAT_VERSION = 1
_TRAJ_MAGIC = b"SKTR"


class IllegalActionError(ValueError):
    """Raised when an environment is stepped with an action that is not legal."""


class TerminalReason(str, Enum):
    DECK_EXHAUSTED = "deck_exhausted"
    BOMBED_OUT = "bombed_out"
    MAX_TURNS = "max_turns"
    PERFECT_SCORE = "perfect_score"


_REASON_CODES = {None: 0, **{r: i + 1 for i, r in enumerate(TerminalReason)}}
_CODE_REASONS = {v: k for k, v in _REASON_CODES.items()}


@dataclass(frozen=True)
class AOHStep:
    obs: bytes
    legal: bytes
    action: Optional[int] = None
    reward: Optional[float] = None


@dataclass(frozen=True)
class AOHistory:
    agent_id: int
    num_actions: int
    steps: tuple[AOHStep, ...] = ()
    max_length: int = DEFAULT_MAX_TRAJECTORY_LENGTH

    def __post_init__(self):
        if len(self.steps) > self.max_length:
            raise ValueError(
                f"history of length {len(self.steps)} exceeds max_length={self.max_length}"
            )
        if self.steps and self.steps[0].reward is not None:
            raise ValueError("the first frame of a history cannot carry a reward")

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def actions(self) -> list[int]:
        return [s.action for s in self.steps if s.action is not None]

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps[1:]]

    def append(self, step: AOHStep) -> "AOHistory":
        return AOHistory(self.agent_id, self.num_actions, self.steps + (step,), self.max_length)


@dataclass(frozen=True)
class Trajectory:
    aoh_per_agent: tuple[AOHistory, ...]
    rewards: tuple[float, ...]
    terminal_reason: Optional[TerminalReason]
    total_return: float = field(default=math.nan)
    padded_length: int = DEFAULT_MAX_TRAJECTORY_LENGTH
    env_id: str = ""
    final_score: Optional[int] = None

    def __post_init__(self):
        total = float(sum(self.rewards))
        if math.isnan(self.total_return):
            object.__setattr__(self, "total_return", total)
        elif not math.isclose(self.total_return, total, abs_tol=1e-9):
            raise ValueError("total_return must equal the sum of per-turn rewards")

    @property
    def num_turns(self) -> int:
        return len(self.rewards)

    @property
    def num_players(self) -> int:
        return len(self.aoh_per_agent)

    @property
    def is_terminal(self) -> bool:
        return self.terminal_reason is not None


def discounted_return(trajectory: Trajectory, gamma: float, t: int = 0) -> float:
    """Discounted sum of the common per-turn rewards from turn ``t`` onwards."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    rewards = trajectory.rewards
    if not 0 <= t < len(rewards):
        raise IndexError(f"t={t} outside trajectory of length {len(rewards)}")
    total = 0.0
    for r in reversed(rewards[t:]):
        total = r + gamma * total
    return total


def slot_encoding(obs: bytes, action: Optional[int], num_actions: int) -> bytes:
    """One history frame: presence bit, observation bits, one-hot action."""
    act = bytearray(num_actions)
    if action is not None:
        act[action] = 1
    return b"\x01" + obs + bytes(act)


def encode_aoh(aoh: AOHistory, horizon: int, obs_size: Optional[int] = None) -> bytes:
    """Fixed-length encoding of the last ``horizon`` frames, zero-padded at the front.

    The presence bit on every frame keeps the map injective even when an
    observation is itself all zeros. An empty history encodes as all zeros;
    its width needs ``obs_size`` since there is no frame to read it from.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if not aoh.steps:
        if obs_size is None:
            raise ValueError("cannot encode an empty history without obs_size")
        return empty_encoding(obs_size, aoh.num_actions, horizon)
    obs_size = len(aoh.steps[0].obs)
    width = 1 + obs_size + aoh.num_actions
    frames = [slot_encoding(s.obs, s.action, aoh.num_actions) for s in aoh.steps[-horizon:]]
    pad = bytes(width * (horizon - len(frames)))
    return pad + b"".join(frames)


def encoding_width(obs_size: int, num_actions: int, horizon: int) -> int:
    return (1 + obs_size + num_actions) * horizon


def empty_encoding(obs_size: int, num_actions: int, horizon: int) -> bytes:
    return bytes(encoding_width(obs_size, num_actions, horizon))


class EnvInterface(ABC):
    """Turn-based environment: exactly one player acts per step."""

    env_id: str = "env"
    num_players: int
    action_space_size: int
    observation_encoding_size: int

    @abstractmethod
    def reset(self, seed: int) -> list[bytes]:
        """Start a new episode and return each player's initial observation."""

    @property
    @abstractmethod
    def current_player(self) -> int: ...

    @abstractmethod
    def legal_actions(self, player: int) -> list[int]:
        """Legal action ids; empty for players who are not to move."""

    @abstractmethod
    def observe(self, player: int) -> bytes: ...

    @abstractmethod
    def step(self, action: int) -> tuple[list[bytes], float, bool]:
        """Apply the current player's action; raises IllegalActionError."""

    @property
    @abstractmethod
    def terminal_reason(self) -> Optional[TerminalReason]: ...

    def final_score(self) -> Optional[int]:
        return None

    def legal_mask(self, player: int) -> bytes:
        mask = bytearray(self.action_space_size)
        for a in self.legal_actions(player):
            mask[a] = 1
        return bytes(mask)

    def action_type(self, action: int) -> str:
        return "other"


# -- binary / JSON serialization ------------------------------------------------


def trajectory_to_bytes(traj: Trajectory) -> bytes:
    """Versioned little-endian record; see README "Trajectory record"."""
    env = traj.env_id.encode()
    out = bytearray()
    out += _TRAJ_MAGIC
    out += struct.pack(
        "<HH", TRAJECTORY_FORMAT_VERSION, len(env)
    )
    out += env
    score = -1 if traj.final_score is None else traj.final_score
    out += struct.pack(
        "<BBIIdi",
        traj.num_players,
        _REASON_CODES[traj.terminal_reason],
        traj.num_turns,
        traj.padded_length,
        traj.total_return,
        score,
    )
    out += struct.pack(f"<{traj.num_turns}d", *traj.rewards)
    for aoh in traj.aoh_per_agent:
        obs_size = len(aoh.steps[0].obs) if aoh.steps else 0
        out += struct.pack("<BIIHI", aoh.agent_id, len(aoh.steps), obs_size, aoh.num_actions, aoh.max_length)
        for s in aoh.steps:
            out += s.obs
            out += s.legal
            out += struct.pack(
                "<id",
                -1 if s.action is None else s.action,
                math.nan if s.reward is None else s.reward,
            )
    return bytes(out)


def trajectory_from_bytes(data: bytes) -> Trajectory:
    if data[:4] != _TRAJ_MAGIC:
        raise ValueError("not a trajectory record")
    version, env_len = struct.unpack_from("<HH", data, 4)
    if version != TRAJECTORY_FORMAT_VERSION:
        raise ValueError(f"unsupported trajectory format version {version}")
    pos = 8
    env_id = data[pos:pos + env_len].decode()
    pos += env_len
    head = struct.Struct("<BBIIdi")
    n_players, reason, n_turns, padded, total, score = head.unpack_from(data, pos)
    pos += head.size
    rewards = struct.unpack_from(f"<{n_turns}d", data, pos)
    pos += 8 * n_turns
    agents = []
    agent_head = struct.Struct("<BIIHI")
    step_tail = struct.Struct("<id")
    for _ in range(n_players):
        agent_id, n_steps, obs_size, n_actions, max_len = agent_head.unpack_from(data, pos)
        pos += agent_head.size
        steps = []
        for _ in range(n_steps):
            obs = data[pos:pos + obs_size]
            pos += obs_size
            legal = data[pos:pos + n_actions]
            pos += n_actions
            action, reward = step_tail.unpack_from(data, pos)
            pos += step_tail.size
            steps.append(
                AOHStep(
                    obs=bytes(obs),
                    legal=bytes(legal),
                    action=None if action < 0 else action,
                    reward=None if math.isnan(reward) else reward,
                )
            )
        agents.append(AOHistory(agent_id, n_actions, tuple(steps), max_len))
    if pos != len(data):
        raise ValueError("trailing bytes after trajectory record")
    return Trajectory(
        aoh_per_agent=tuple(agents),
        rewards=tuple(rewards),
        terminal_reason=_CODE_REASONS[reason],
        total_return=total,
        padded_length=padded,
        env_id=env_id,
        final_score=None if score < 0 else score,
    )


def trajectory_to_json(traj: Trajectory) -> str:
    """Human-readable dump for debugging; not meant to round-trip."""

    def bits(b: bytes) -> str:
        return "".join("1" if x else "0" for x in b)

    doc = {
        "format_version": TRAJECTORY_FORMAT_VERSION,
        "env_id": traj.env_id,
        "terminal_reason": traj.terminal_reason.value if traj.terminal_reason else None,
        "total_return": traj.total_return,
        "final_score": traj.final_score,
        "padded_length": traj.padded_length,
        "rewards": list(traj.rewards),
        "agents": [
            {
                "agent_id": aoh.agent_id,
                "steps": [
                    {"obs": bits(s.obs), "legal": bits(s.legal), "action": s.action, "reward": s.reward}
                    for s in aoh.steps
                ],
            }
            for aoh in traj.aoh_per_agent
        ],
    }
    return json.dumps(doc, indent=1)

