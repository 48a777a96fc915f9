"""n-step double-Q targets, trajectory priorities and one learner update."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from ..env_core import AOHistory, Trajectory
from .actor import history_keys
from .config import LearnerConfig
from .qfunction import MLPQ, Adam, QFunction, ShapeError, TabularQ, clip_grad_norm


def trajectory_priority(step_td_errors: Sequence[float]) -> float:
    """0.9 * max|td| + 0.1 * mean|td| over the steps of one trajectory."""
    if len(step_td_errors) == 0:
        raise ValueError("trajectory_priority needs at least one TD error")
    mags = [abs(float(x)) for x in step_td_errors]
    return 0.9 * max(mags) + 0.1 * (sum(mags) / len(mags))


@dataclass
class SeatTransitions:
    """One seat's view of a trajectory, pre-digested for learning."""

    keys: list[bytes]
    legal: list[list[int]]
    actions: list[int]
    rewards: list[float]

    @property
    def num_transitions(self) -> int:
        return len(self.actions)

    @classmethod
    def from_history(cls, aoh: AOHistory, horizon: int) -> "SeatTransitions":
        keys = history_keys(aoh, horizon)
        legal = [[a for a, bit in enumerate(s.legal) if bit] for s in aoh.steps]
        actions = [s.action for s in aoh.steps[:-1]]
        if any(a is None for a in actions):
            raise ValueError("only the final frame of a history may lack an action")
        rewards = [s.reward for s in aoh.steps[1:]]
        return cls(keys, legal, actions, rewards)


@dataclass
class ReplayItem:
    trajectory: Trajectory
    seats: tuple[int, ...]
    seat_data: list[SeatTransitions] = field(default_factory=list)

    @classmethod
    def build(cls, trajectory: Trajectory, seats: Sequence[int], horizon: int) -> "ReplayItem":
        data = [SeatTransitions.from_history(trajectory.aoh_per_agent[s], horizon) for s in seats]
        return cls(trajectory, tuple(seats), data)

    @property
    def num_transitions(self) -> int:
        return sum(d.num_transitions for d in self.seat_data)


def _bootstrap_action(online: QFunction, key: bytes, legal: list[int]) -> int:
    return online.greedy(key, legal)


def nstep_double_q_target(
    history: Union[AOHistory, Trajectory, SeatTransitions],
    t: int,
    online: QFunction,
    target: QFunction,
    config: LearnerConfig,
    seat: int = 0,
) -> float:
    """sum_{j<n} gamma^j r_{t+j} + gamma^n Q_target(s_{t+n}, argmax_a Q_online(s_{t+n}, a)).

    ``r_{t+j}`` is the reward that followed the action at frame ``t+j``; the
    bootstrap is dropped once ``t+n`` reaches the terminal frame.
    """
    if isinstance(history, Trajectory):
        history = history.aoh_per_agent[seat]
    if isinstance(history, AOHistory):
        history = SeatTransitions.from_history(history, online.horizon)
    m = history.num_transitions
    if not 0 <= t < m:
        raise IndexError(f"t={t} outside [0, {m})")
    gamma, n = config.gamma, config.n_step
    g = 0.0
    disc = 1.0
    for j in range(n):
        if t + j >= m:
            return g
        g += disc * history.rewards[t + j]
        disc *= gamma
    s = t + n
    if s >= m:
        return g
    key, legal = history.keys[s], history.legal[s]
    a_star = _bootstrap_action(online, key, legal)
    return g + disc * target.values(key)[a_star]


@dataclass
class StepResult:
    priorities: list[float]
    td_errors: list[float]
    touched_keys: set = field(default_factory=set)
    loss: float = 0.0
    grad_norm: float = 0.0


def _targets_tabular(items, online, target, config):
    gamma, n = config.gamma, config.n_step
    g_pows = [gamma**j for j in range(n + 1)]
    out = []
    for item in items:
        per_item = []
        for d in item.seat_data:
            m = d.num_transitions
            rewards, keys, legal = d.rewards, d.keys, d.legal
            for t in range(m):
                end = min(t + n, m)
                g = 0.0
                for j in range(t, end):
                    g += g_pows[j - t] * rewards[j]
                if t + n < m:
                    s = t + n
                    a_star = online.greedy(keys[s], legal[s])
                    g += g_pows[n] * target.values(keys[s])[a_star]
                per_item.append((keys[t], d.actions[t], g))
        out.append(per_item)
    return out


def _targets_mlp(items, online: MLPQ, target: MLPQ, config):
    gamma, n = config.gamma, config.n_step
    rows = []  # (item_idx, key, action, partial_return, bootstrap_slot or -1)
    boot_keys, boot_legal = [], []
    for i, item in enumerate(items):
        for d in item.seat_data:
            m = d.num_transitions
            for t in range(m):
                end = min(t + n, m)
                g = sum(gamma ** (j - t) * d.rewards[j] for j in range(t, end))
                slot = -1
                if t + n < m:
                    slot = len(boot_keys)
                    boot_keys.append(d.keys[t + n])
                    boot_legal.append(d.legal[t + n])
                rows.append((i, d.keys[t], d.actions[t], g, slot))
    if boot_keys:
        q_on = online.batch_values(boot_keys)
        q_tg = target.batch_values(boot_keys)
        mask = np.full(q_on.shape, -np.inf)
        for r, legal in enumerate(boot_legal):
            mask[r, legal] = 0.0
        a_star = np.argmax(q_on + mask, axis=1)
        boot_vals = q_tg[np.arange(len(boot_keys)), a_star]
    else:
        boot_vals = np.zeros(0)
    disc = gamma**n
    return [
        (i, key, a, g + (disc * boot_vals[slot] if slot >= 0 else 0.0))
        for i, key, a, g, slot in rows
    ]


def gradient_step(
    items: Sequence[ReplayItem],
    weights: Sequence[float],
    online: QFunction,
    target: QFunction,
    config: LearnerConfig,
    optimizer: Optional[Adam] = None,
) -> StepResult:
    """One update of ``online`` (in place) on a batch of replayed trajectories.

    Tabular: per-transition step Q[s,a] += lr * w * (target - Q[s,a]).
    MLP: one Adam step on 0.5 * mean(w * td^2) with global-norm clipping.
    Returns refreshed per-trajectory priorities computed from pre-update TD errors.
    """
    if len(items) == 0:
        raise ValueError("empty batch")
    if len(weights) != len(items):
        raise ShapeError("one importance weight per trajectory is required")
    for item in items:
        for d in item.seat_data:
            if d.keys and len(d.keys[0]) != online.input_width:
                raise ShapeError(f"history key width {len(d.keys[0])} != {online.input_width}")
    if isinstance(online, TabularQ):
        return _tabular_step(items, weights, online, target, config)
    if isinstance(online, MLPQ):
        if optimizer is None:
            raise ValueError("MLP updates need an Adam optimizer")
        return _mlp_step(items, weights, online, target, config, optimizer)
    raise TypeError(f"unsupported Q-function {type(online).__name__}")


def _tabular_step(items, weights, online: TabularQ, target: TabularQ, config) -> StepResult:
    per_item = _targets_tabular(items, online, target, config)
    lr = config.learning_rate
    priorities, all_td = [], []
    updates = []
    for w, rows in zip(weights, per_item):
        tds = []
        for key, a, g in rows:
            td = g - online.values(key)[a]
            tds.append(td)
            updates.append((key, a, g, w))
        all_td += tds
        priorities.append(trajectory_priority(tds) if tds else 0.0)
    touched = set()
    for key, a, g, w in updates:
        row = online.row(key)
        row[a] += lr * w * (g - row[a])
        touched.add(key)
    loss = 0.5 * float(np.mean(np.square(all_td))) if all_td else 0.0
    return StepResult(priorities, all_td, touched, loss)


def _mlp_step(items, weights, online: MLPQ, target: MLPQ, config, optimizer: Adam) -> StepResult:
    rows = _targets_mlp(items, online, target, config)
    if not rows:
        return StepResult([0.0] * len(items), [])
    x = np.frombuffer(b"".join(r[1] for r in rows), dtype=np.uint8)
    x = x.reshape(len(rows), online.input_width).astype(np.float64)
    acts = np.array([r[2] for r in rows])
    tgt = np.array([r[3] for r in rows])
    w = np.asarray(weights, dtype=np.float64)[[r[0] for r in rows]]
    loss, grads, td = online.loss_and_grad(x, acts, tgt, w)
    norm = clip_grad_norm(grads, config.gradient_clip)
    optimizer.step(online.params, grads)
    by_item: list[list[float]] = [[] for _ in items]
    for (i, *_), e in zip(rows, td):
        by_item[i].append(float(e))
    priorities = [trajectory_priority(t) if t else 0.0 for t in by_item]
    return StepResult(priorities, td.tolist(), set(), loss, norm)
