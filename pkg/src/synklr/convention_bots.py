"""Scripted Hanabi partners with a fixed hint convention.

``rank_bot`` signals "play this" by hinting the card's rank, ``color_bot`` by
hinting its color. Both follow the same cascade:

1. play a card the partner marked through our channel, if it can still be playable;
2. hint a playable partner card through our channel (needs an info token);
3. discard the oldest card that carries no hint;
4. discard the oldest card;
5. otherwise take the first legal action.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .hanabi import HanabiConfig, HanabiObservation
from .learner import Policy

RANK_HINT, COLOR_HINT = "rank_hint", "color_hint"
BOT_CONVENTIONS = {"rank_bot": RANK_HINT, "color_bot": COLOR_HINT}


@dataclass
class HintMemory:
    """Own slots marked by the partner, kept across turns and shifted as cards leave."""

    marked: list[int] = field(default_factory=list)

    def observe(self, obs: HanabiObservation, convention: str) -> None:
        m = obs.last_move
        if m is None or m.player == obs.observer:
            return
        channel = "hint_rank" if convention == RANK_HINT else "hint_color"
        if m.kind == channel:
            for slot in m.revealed:
                if slot not in self.marked:
                    self.marked.append(slot)

    def remove(self, slot: int) -> None:
        self.marked = [s - 1 if s > slot else s for s in self.marked if s != slot]


def _could_be_playable(obs: HanabiObservation, knowledge) -> bool:
    cmask, rmask = knowledge[0], knowledge[1]
    cfg = obs.config
    return any(
        cmask >> c & 1 and rmask >> obs.fireworks[c] & 1
        for c in range(cfg.num_colors)
        if obs.fireworks[c] < cfg.num_ranks
    )


def convention_act(obs: HanabiObservation, convention: str, memory: Optional[HintMemory] = None) -> int:
    """Next action under the cascade. ``memory`` carries marks between turns;
    without it only the partner's latest hint counts."""
    if convention not in (RANK_HINT, COLOR_HINT):
        raise ValueError(f"unknown convention {convention!r}")
    cfg: HanabiConfig = obs.config
    legal = [a for a, ok in enumerate(obs.legal_action_mask) if ok]
    if not legal:
        raise ValueError("no legal action in observation")
    if memory is None:
        memory = HintMemory()
    memory.observe(obs, convention)
    memory.marked = [s for s in memory.marked if s < len(obs.own_hand_knowledge)]

    # 1. play marked cards, surest first, newest slot on ties
    candidates = [s for s in memory.marked if _could_be_playable(obs, obs.own_hand_knowledge[s])]
    memory.marked = candidates
    if candidates:
        sure = [s for s in candidates if obs.possibly_playable_only(obs.own_hand_knowledge[s])]
        slot = max(sure) if sure else max(candidates)
        action = cfg.encode_action("play", slot)
        if action in legal:
            memory.remove(slot)
            return action

    # 2. signal a playable partner card that hasn't been signalled yet
    if obs.info_tokens > 0:
        flag = 3 if convention == RANK_HINT else 2
        for slot, card in enumerate(obs.partner_hand):
            if obs.playable(card) and not obs.partner_knowledge[slot][flag]:
                if convention == RANK_HINT:
                    action = cfg.encode_action("hint_rank", card % cfg.num_ranks)
                else:
                    action = cfg.encode_action("hint_color", card // cfg.num_ranks)
                if action in legal:
                    return action

    # 3./4. discard oldest unhinted, else oldest
    hand = obs.own_hand_knowledge
    order = [s for s in range(len(hand)) if not (hand[s][2] or hand[s][3])] + list(range(len(hand)))
    for slot in order:
        action = cfg.encode_action("discard", slot)
        if action in legal:
            memory.remove(slot)
            return action
    return legal[0]


class ConventionPolicy(Policy):
    """Policy adapter; needs a HanabiEnv (it reads the structured observation)."""

    uses_key = False

    def __init__(self, convention: str, name: Optional[str] = None):
        if convention not in (RANK_HINT, COLOR_HINT):
            raise ValueError(f"unknown convention {convention!r}")
        self.convention = convention
        self.name = name or ("rank_bot" if convention == RANK_HINT else "color_bot")
        self._memory: dict[int, HintMemory] = {}

    def begin_episode(self, seat: int) -> None:
        # one memory per seat so a bot can sit in both seats of a self-play game
        self._memory[seat] = HintMemory()

    def act(self, key, legal, rng, env, player):
        memory = self._memory.setdefault(player, HintMemory())
        return convention_act(env.structured(player), self.convention, memory)


def make_bot(name: str) -> ConventionPolicy:
    try:
        return ConventionPolicy(BOT_CONVENTIONS[name], name)
    except KeyError:
        raise ValueError(f"unknown bot {name!r}; choose from {sorted(BOT_CONVENTIONS)}") from None
