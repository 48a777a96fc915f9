"""Independent re-implementation of the Hanabi rules used as a test oracle.

Only the documented conventions are shared with the engine: card ids
``color * ranks + rank``, the action-id layout, the SplitMix64 constants and
Fisher-Yates order, draws from the end of the deck, and the documented
end-of-game rules. Nothing here imports the engine's rule code.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

M64 = 0xFFFFFFFFFFFFFFFF


def splitmix_stream(seed):
    x = seed & M64
    while True:
        x = (x + 0x9E3779B97F4A7C15) & M64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
        yield z ^ (z >> 31)


def build_deck(colors, ranks, per_rank, seed):
    cards = []
    for c in range(colors):
        for r in range(ranks):
            cards += [c * ranks + r] * per_rank[r]
    gen = splitmix_stream(seed)
    for i in range(len(cards) - 1, 0, -1):
        j = next(gen) % (i + 1)
        cards[i], cards[j] = cards[j], cards[i]
    return cards


class Violation(AssertionError):
    pass


@dataclass
class RefGame:
    colors: int
    ranks: int
    hand_size: int
    max_info: int
    lives: int
    per_rank: tuple
    max_turns: int
    seed: int
    bomb_zero: bool = True
    deck: list = field(init=False)
    hands: list = field(init=False)
    stacks: list = field(init=False)
    info: int = field(init=False)
    discards: list = field(init=False)
    to_move: int = 0
    turns: int = 0
    final_countdown: int = -1
    over: str = ""

    @classmethod
    def from_config(cls, cfg, seed):
        return cls(cfg.num_colors, cfg.num_ranks, cfg.hand_size, cfg.num_info_tokens, cfg.num_life_tokens,
                   tuple(cfg.cards_per_rank), cfg.max_turns, seed, cfg.bomb_zero_score)

    def __post_init__(self):
        self.deck = build_deck(self.colors, self.ranks, self.per_rank, self.seed)
        self.total_cards = len(self.deck)
        self.hands = [[], []]
        for p in range(2):
            for _ in range(self.hand_size):
                self.hands[p].append(self.deck.pop())
        self.stacks = [0] * self.colors
        self.info = self.max_info
        self.discards = []

    def legal(self):
        if self.over:
            return []
        H = self.hand_size
        mine = self.hands[self.to_move]
        other = self.hands[1 - self.to_move]
        out = [i for i in range(len(mine))] + [H + i for i in range(len(mine))]
        if self.info > 0:
            for c in range(self.colors):
                if any(x // self.ranks == c for x in other):
                    out.append(2 * H + c)
            for r in range(self.ranks):
                if any(x % self.ranks == r for x in other):
                    out.append(2 * H + self.colors + r)
        return sorted(out)

    def score(self):
        if self.over == "bombed_out" and self.bomb_zero:
            return 0
        return sum(self.stacks)

    def step(self, a):
        if a not in self.legal():
            raise Violation(f"illegal action {a} at turn {self.turns}")
        H = self.hand_size
        p = self.to_move
        before = self.score()
        started_empty = len(self.deck) == 0
        if a < 2 * H:
            slot = a % H
            card = self.hands[p].pop(slot)
            if a < H:
                c, r = divmod(card, self.ranks)
                if self.stacks[c] == r:
                    self.stacks[c] += 1
                    if r == self.ranks - 1:
                        self.info = min(self.info + 1, self.max_info)
                else:
                    self.lives -= 1
                    self.discards.append(card)
            else:
                self.discards.append(card)
                self.info = min(self.info + 1, self.max_info)
            if self.deck:
                self.hands[p].append(self.deck.pop())
        else:
            self.info -= 1
        self.turns += 1
        if started_empty:
            self.final_countdown += 1 if self.final_countdown >= 0 else 2
        if self.lives == 0:
            self.over = "bombed_out"
        elif sum(self.stacks) == self.colors * self.ranks:
            self.over = "perfect_score"
        elif not self.deck and self.final_countdown >= 2:
            self.over = "deck_exhausted"
        elif self.turns >= self.max_turns:
            self.over = "max_turns"
        self.to_move = 1 - p
        self.check_conservation()
        return self.score() - before

    def check_conservation(self):
        held = len(self.deck) + sum(len(h) for h in self.hands) + len(self.discards) + sum(self.stacks)
        if held != self.total_cards:
            raise Violation(f"card count {held} != {self.total_cards}")
        if not 0 <= self.info <= self.max_info:
            raise Violation(f"info tokens {self.info} out of range")
        if self.lives < 0:
            raise Violation("negative life tokens")
        if any(not 0 <= s <= self.ranks for s in self.stacks):
            raise Violation("firework stack out of range")


def random_playout(cfg, seed, rng: random.Random):
    """Oracle playout with uniform actions; returns (score, bombed, turns)."""
    g = RefGame.from_config(cfg, seed)
    while not g.over:
        legal = g.legal()
        g.step(legal[int(rng.random() * len(legal))])
    return g.score(), g.over == "bombed_out", g.turns
