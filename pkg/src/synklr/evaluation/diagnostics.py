from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from ..env_core import EnvInterface, TerminalReason
from ..learner import GreedyQPolicy, Policy, TabularQ, UniformRandomPolicy, run_actor
from .pairing import ACTION_TYPES, _stderr, game_seed


class RecordingPolicy(Policy):
    """Delegates to ``inner`` and keeps the last decision per seat."""

    def __init__(self, inner: Policy, hook=None):
        self.inner = inner
        self.horizon = inner.horizon
        self.uses_key = inner.uses_key
        self.name = inner.name
        self.hook = hook
        self.last: dict[int, tuple] = {}

    def begin_episode(self, seat: int) -> None:
        self.inner.begin_episode(seat)
        self.last.pop(seat, None)

    def act(self, key, legal, rng, env, player):
        if self.hook is not None:
            self.hook(env, player)
        action = self.inner.act(key, legal, rng, env, player)
        self.last[player] = (key, tuple(legal), action)
        return action


@dataclass
class BombEvent:
    game: int
    seat: int
    action: int
    q_values: Optional[tuple[float, ...]]
    positive_play: bool
    play_dominates: bool
    unseen_key: bool


@dataclass
class BombAuditReport:
    num_games: int
    bombouts: int
    bombout_rate: float
    bombout_stderr: float
    audited: int
    positive_play_fraction: float
    dominant_play_fraction: float
    unseen_keys: int
    events: list[BombEvent] = field(default_factory=list, repr=False)


def bombout_qvalue_audit(policy_a: Policy, policy_b: Policy, env: EnvInterface, num_games: int,
                         seed: int = 0) -> BombAuditReport:
    """For every game lost to a misplay, inspect the bomber's Q-values at that decision.

    An event counts as "positive" when the play had Q > 0 and as "dominant"
    when every legal non-play action had a strictly lower Q. Decisions made
    by tabular learners on keys they never trained on are counted separately.
    """
    if num_games < 2 or num_games % 2:
        raise ValueError("num_games must be a positive even number")
    rec = [RecordingPolicy(policy_a), RecordingPolicy(policy_b)]
    events: list[BombEvent] = []
    flags = []
    for g in range(num_games):
        deal, swapped = divmod(g, 2)
        seats = [rec[1], rec[0]] if swapped else [rec[0], rec[1]]
        log: list = []
        traj = run_actor(env, seats, [0.0, 0.0], game_seed(seed, deal), action_log=log)
        bombed = traj.terminal_reason == TerminalReason.BOMBED_OUT
        flags.append(bombed)
        if not bombed:
            continue
        seat = log[-1][0]
        key, legal, action = seats[seat].last[seat]
        inner = seats[seat].inner
        if not isinstance(inner, GreedyQPolicy) or key is None:
            events.append(BombEvent(g, seat, action, None, False, False, False))
            continue
        q = inner.q.values(key)
        unseen = isinstance(inner.q, TabularQ) and key not in inner.q.table
        others = [q[a] for a in legal if env.action_type(a) != "play"]
        events.append(BombEvent(
            g, seat, action, tuple(float(v) for v in q), q[action] > 0,
            all(v < q[action] for v in others), unseen,
        ))
    audited = [e for e in events if e.q_values is not None]
    return BombAuditReport(
        num_games=num_games,
        bombouts=sum(flags),
        bombout_rate=float(np.mean(flags)),
        bombout_stderr=_stderr([float(f) for f in flags]),
        audited=len(audited),
        positive_play_fraction=float(np.mean([e.positive_play for e in audited])) if audited else 0.0,
        dominant_play_fraction=float(np.mean([e.play_dominates for e in audited])) if audited else 0.0,
        unseen_keys=sum(e.unseen_key for e in audited),
        events=events,
    )


@dataclass(frozen=True)
class TraceRow:
    step: int
    lower_level: int
    upper_level: int
    fractions: tuple[float, ...]  # ordered as ACTION_TYPES
    num_actions: int


def action_type_histogram(lower: Policy, upper: Policy, env: EnvInterface, num_games: int,
                          seed: int = 0) -> tuple[Counter, int]:
    """Action-type counts of ``lower`` over seat-balanced games with ``upper``."""
    counts: Counter = Counter()
    for g in range(num_games):
        deal, swapped = divmod(g, 2)
        seats = [upper, lower] if swapped else [lower, upper]
        lower_seat = 1 if swapped else 0
        log: list = []
        run_actor(env, seats, [0.0, 0.0], game_seed(seed, deal), action_log=log)
        for p, a in log:
            if p == lower_seat:
                counts[env.action_type(a)] += 1
    return counts, sum(counts.values())


def action_type_trace(snapshots: Mapping[int, Sequence[Policy]], steps: Sequence[int], env: EnvInterface,
                      num_games: int = 200, seed: int = 0) -> list[TraceRow]:
    """Level-(k-1) action-type distribution at each checkpoint, for each adjacent pair.

    ``snapshots[level][i]`` is that level's policy at ``steps[i]``; level 0 is
    the uniform policy and need not be supplied.
    """
    levels = sorted(lv for lv in snapshots if lv > 0)
    rows = []
    for i, t in enumerate(steps):
        for k in levels:
            if k - 1 not in snapshots and k - 1 != 0:
                continue
            lower = UniformRandomPolicy() if k == 1 else snapshots[k - 1][i]
            counts, total = action_type_histogram(lower, snapshots[k][i], env, num_games, seed)
            fr = tuple(counts.get(a, 0) / total if total else 0.0 for a in ACTION_TYPES)
            rows.append(TraceRow(t, k - 1, k, fr, total))
    return rows


def legal_type_availability(env: EnvInterface, num_games: int, seed: int = 0) -> dict[str, float]:
    """Expected action-type frequencies of a uniform player: mean over visited
    decision points of (#legal actions of a type / #legal actions)."""
    acc = Counter()
    n = 0

    def hook(e, player):
        nonlocal n
        legal = e.legal_actions(player)
        for a in legal:
            acc[e.action_type(a)] += 1.0 / len(legal)
        n += 1

    pol = RecordingPolicy(UniformRandomPolicy(), hook)
    for g in range(num_games):
        run_actor(env, [pol, UniformRandomPolicy()] if g % 2 == 0 else [UniformRandomPolicy(), pol],
                  [0.0, 0.0], game_seed(seed, g))
    return {t: acc[t] / n for t in ACTION_TYPES} if n else {}


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / n)
