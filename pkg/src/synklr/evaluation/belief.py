"""Counting belief model over hidden own-hand cards.

A sample is (context, true card) for one slot of the acting player's hand.
The default context is what the holder can see about that slot plus the
public situation that gives a partner's hint its meaning: hint masks and
flags, slot index, firework heights and the partner's last move (its kind and
whether it touched this slot).
"""

from __future__ import annotations

import math
import random
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Optional, Sequence

import numpy as np

from ..hanabi import HanabiEnv, HanabiState
from ..learner import Policy, run_actor
from .diagnostics import RecordingPolicy, entropy
from .pairing import game_seed

Sample = tuple[Hashable, int]


def slot_context(state: HanabiState, player: int, slot: int) -> Hashable:
    k = state.knowledge[player][slot]
    m = state.last_move
    if m is None or m.player == player:
        last = ("none", False)
    else:
        last = (m.kind, slot in m.revealed)
    return (slot, k[0], k[1], k[2], k[3], tuple(state.fireworks)) + last


def hint_only_context(state: HanabiState, player: int, slot: int) -> Hashable:
    k = state.knowledge[player][slot]
    return (k[0], k[1])


class BeliefModel:
    """Per-context categorical over card identities with additive smoothing."""

    def __init__(self, num_card_types: int, smoothing: float = 1.0):
        if num_card_types < 1:
            raise ValueError("num_card_types must be >= 1")
        if smoothing <= 0:
            raise ValueError("smoothing must be positive")
        self.num_card_types = num_card_types
        self.smoothing = smoothing
        self.counts: dict[Hashable, np.ndarray] = defaultdict(lambda: np.zeros(num_card_types))
        self.num_samples = 0

    def fit(self, samples: Iterable[Sample]) -> "BeliefModel":
        for ctx, card in samples:
            self.counts[ctx][card] += 1
            self.num_samples += 1
        return self

    def distribution(self, ctx: Hashable) -> np.ndarray:
        c = self.counts.get(ctx)
        if c is None:
            return np.full(self.num_card_types, 1.0 / self.num_card_types)
        smoothed = c + self.smoothing
        return smoothed / smoothed.sum()

    def log_prob(self, ctx: Hashable, card: int) -> float:
        return math.log(self.distribution(ctx)[card])

    def cross_entropy(self, samples: Sequence[Sample]) -> tuple[float, float]:
        """Mean and standard error of -log p(card | context) over ``samples``."""
        if not samples:
            raise ValueError("no samples")
        nll = np.array([-self.log_prob(ctx, card) for ctx, card in samples])
        se = float(nll.std(ddof=1) / math.sqrt(len(nll))) if len(nll) > 1 else 0.0
        return float(nll.mean()), se

    def plugin_entropy(self) -> float:
        """Sample-weighted entropy of the unsmoothed empirical conditionals."""
        if not self.num_samples:
            raise ValueError("model has not been fit")
        return float(sum(c.sum() * entropy(c / c.sum()) for c in self.counts.values()) / self.num_samples)


ContextFn = Callable[[HanabiState, int, int], Hashable]


def belief_samples(sources: Sequence[Policy], env: HanabiEnv, num_games: int, seed: int = 0,
                   context: ContextFn = slot_context, max_turn: Optional[int] = None) -> list[Sample]:
    """Self-play games, one source policy per game drawn uniformly; every
    decision contributes one sample per card in the mover's hand."""
    if not sources:
        raise ValueError("empty source policy set")
    if not isinstance(env, HanabiEnv):
        raise TypeError("belief samples need a HanabiEnv")
    samples: list[Sample] = []

    def hook(e: HanabiEnv, player: int):
        st = e.state
        if max_turn is not None and st.turn > max_turn:
            return
        for slot, card in enumerate(st.hands[player]):
            samples.append((context(st, player, slot), card))

    pick = random.Random(seed)
    for g in range(num_games):
        pol = RecordingPolicy(sources[pick.randrange(len(sources))], hook)
        run_actor(env, [pol, pol], [0.0, 0.0], game_seed(seed, g))
    return samples


@dataclass(frozen=True)
class BeliefResult:
    cross_entropy: float
    stderr: float
    train_samples: int
    test_samples: int
    plugin_entropy: float


def belief_cross_entropy(sources: Sequence[Policy], probe: Sequence[Policy], env: HanabiEnv,
                         num_games: int, seed: int = 0, probe_games: Optional[int] = None,
                         context: ContextFn = slot_context, max_turn: Optional[int] = None,
                         smoothing: float = 1.0) -> BeliefResult:
    """Fit on self-play of ``sources`` (a single final policy or a snapshot
    set), score on held-out self-play of ``probe``. Train and test games use
    disjoint deal seeds."""
    if not sources:
        raise ValueError("empty snapshot set")
    train = belief_samples(sources, env, num_games, seed, context, max_turn)
    test = belief_samples(probe, env, probe_games or num_games, seed + 1_000_003, context, max_turn)
    model = BeliefModel(env.config.num_card_types, smoothing).fit(train)
    ce, se = model.cross_entropy(test)
    return BeliefResult(ce, se, len(train), len(test), model.plugin_entropy())


def deck_prior_entropy(config) -> float:
    """Entropy of one card drawn from a full deck (the no-information belief)."""
    counts = np.array([config.card_count(c) for c in range(config.num_card_types)], dtype=float)
    return entropy(counts / counts.sum())
