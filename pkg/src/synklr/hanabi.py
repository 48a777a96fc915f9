"""Two-player Hanabi with configurable deck size.

Cards are integers ``color * num_ranks + rank`` with 0-based ranks. The deck
is drawn from the *end* of ``HanabiState.deck``. New cards are appended to the
end of a hand, so slot 0 always holds the oldest card.

Action ids, for hand size ``H``, ``C`` colors and ``R`` ranks::

    [0, H)              play slot i
    [H, 2H)             discard slot i
    [2H, 2H + C)        hint color c to the partner
    [2H + C, 2H + C + R) hint rank r to the partner

Deck shuffles use SplitMix64 (increment 0x9E3779B97F4A7C15, multipliers
0xBF58476D1CE4E5B9 and 0x94D049BB133111EB, shifts 30/27/31) driving a
Fisher-Yates pass from the last index down, ``j = next() % (i + 1)``, so a seed
gives the same deck on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional

from .env_core import EnvInterface, IllegalActionError, TerminalReason, Trajectory

MASK64 = (1 << 64) - 1

PLAY, DISCARD, HINT_COLOR, HINT_RANK = "play", "discard", "hint_color", "hint_rank"
ACTION_KINDS = (PLAY, DISCARD, HINT_COLOR, HINT_RANK)


class StateError(RuntimeError):
    pass


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


def shuffle_deck(cards: list[int], seed: int) -> list[int]:
    deck = list(cards)
    rng = SplitMix64(seed)
    for i in range(len(deck) - 1, 0, -1):
        j = rng.next() % (i + 1)
        deck[i], deck[j] = deck[j], deck[i]
    return deck


@dataclass(frozen=True)
class HanabiConfig:
    num_colors: int = 5
    num_ranks: int = 5
    hand_size: int = 5
    num_info_tokens: int = 8
    num_life_tokens: int = 3
    cards_per_rank: tuple[int, ...] = (3, 2, 2, 2, 1)
    num_players: int = 2
    max_turns: int = 200
    bomb_zero_score: bool = True
    name: str = "hanabi"

    def __post_init__(self):
        object.__setattr__(self, "cards_per_rank", tuple(self.cards_per_rank))
        problems = []
        if not 1 <= self.num_colors <= 5:
            problems.append("colors must be in 1..5")
        if not 1 <= self.num_ranks <= 5:
            problems.append("ranks must be in 1..5")
        if not 1 <= self.hand_size <= 5:
            problems.append("hand_size must be in 1..5")
        if self.num_info_tokens < 1:
            problems.append("info_tokens must be >= 1")
        if self.num_life_tokens < 1:
            problems.append("life_tokens must be >= 1")
        if len(self.cards_per_rank) != self.num_ranks or min(self.cards_per_rank, default=0) < 1:
            problems.append("cards_per_rank needs one positive count per rank")
        if self.num_players != 2:
            problems.append("only two-player games are supported")
        if self.max_turns < 1:
            problems.append("max_turns must be >= 1")
        if not problems and self.deck_size < self.num_players * self.hand_size:
            problems.append("deck too small to deal both hands")
        if problems:
            raise ValueError("invalid HanabiConfig: " + "; ".join(problems))

    @property
    def max_score(self) -> int:
        return self.num_colors * self.num_ranks

    @property
    def deck_size(self) -> int:
        return self.num_colors * sum(self.cards_per_rank)

    @property
    def num_card_types(self) -> int:
        return self.num_colors * self.num_ranks

    @property
    def num_actions(self) -> int:
        return 2 * self.hand_size + self.num_colors + self.num_ranks

    def full_deck(self) -> list[int]:
        return [
            c * self.num_ranks + r
            for c in range(self.num_colors)
            for r in range(self.num_ranks)
            for _ in range(self.cards_per_rank[r])
        ]

    def card_count(self, card: int) -> int:
        return self.cards_per_rank[card % self.num_ranks]

    def decode_action(self, action: int) -> tuple[str, int]:
        H, C = self.hand_size, self.num_colors
        if 0 <= action < H:
            return PLAY, action
        if action < 2 * H:
            return DISCARD, action - H
        if action < 2 * H + C:
            return HINT_COLOR, action - 2 * H
        if action < self.num_actions:
            return HINT_RANK, action - 2 * H - C
        raise IllegalActionError(f"action id {action} outside [0, {self.num_actions})")

    def encode_action(self, kind: str, index: int) -> int:
        H, C = self.hand_size, self.num_colors
        return {PLAY: 0, DISCARD: H, HINT_COLOR: 2 * H, HINT_RANK: 2 * H + C}[kind] + index

    @classmethod
    def from_mapping(cls, cfg: Mapping, base: Optional["HanabiConfig"] = None) -> "HanabiConfig":
        """Build from the documented config keys, layered over ``base``."""
        known = {
            "colors": "num_colors",
            "ranks": "num_ranks",
            "hand_size": "hand_size",
            "info_tokens": "num_info_tokens",
            "life_tokens": "num_life_tokens",
            "cards_per_rank": "cards_per_rank",
            "max_turns": "max_turns",
            "bomb_zero_score": "bomb_zero_score",
            "name": "name",
        }
        unknown = sorted(set(cfg) - set(known))
        if unknown:
            raise ValueError(f"unknown hanabi config keys: {unknown}")
        values = {} if base is None else {f: getattr(base, f) for f in known.values()}
        values.update({known[k]: v for k, v in cfg.items()})
        return cls(**values)


HANABI_FULL = HanabiConfig(name="hanabi-full")
HANABI_MINI = HanabiConfig(
    num_colors=2,
    num_ranks=3,
    hand_size=2,
    num_info_tokens=3,
    num_life_tokens=1,
    cards_per_rank=(2, 2, 1),
    max_turns=40,
    name="hanabi-mini",
)
PRESETS = {"hanabi-full": HANABI_FULL, "hanabi-mini": HANABI_MINI}


def preset(name: str, **overrides) -> HanabiConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown hanabi preset {name!r}; choose from {sorted(PRESETS)}") from None
    return HanabiConfig.from_mapping(overrides, base) if overrides else base


class Move(NamedTuple):
    player: int
    kind: str
    index: int  # slot for play/discard, color/rank for hints
    card: int = -1  # card played/discarded, -1 for hints
    success: bool = False
    revealed: tuple[int, ...] = ()  # slots touched by a hint


@dataclass
class HanabiState:
    """Full game state. ``knowledge[p][i]`` is ``[color_mask, rank_mask, color_hinted, rank_hinted]``."""

    config: HanabiConfig
    deck: list[int]
    hands: list[list[int]]
    knowledge: list[list[list[int]]]
    fireworks: list[int]
    info_tokens: int
    life_tokens: int
    discard_pile: list[int] = field(default_factory=list)
    current_player: int = 0
    turn: int = 0
    turns_since_deck_empty: int = 0
    terminal_reason: Optional[TerminalReason] = None
    last_move: Optional[Move] = None

    @classmethod
    def initial(cls, config: HanabiConfig, seed: int) -> "HanabiState":
        deck = shuffle_deck(config.full_deck(), seed)
        full_c = (1 << config.num_colors) - 1
        full_r = (1 << config.num_ranks) - 1
        hands = [[] for _ in range(config.num_players)]
        knowledge = [[] for _ in range(config.num_players)]
        for p in range(config.num_players):
            for _ in range(config.hand_size):
                hands[p].append(deck.pop())
                knowledge[p].append([full_c, full_r, 0, 0])
        return cls(
            config=config,
            deck=deck,
            hands=hands,
            knowledge=knowledge,
            fireworks=[0] * config.num_colors,
            info_tokens=config.num_info_tokens,
            life_tokens=config.num_life_tokens,
        )

    def copy(self) -> "HanabiState":
        return HanabiState(
            config=self.config,
            deck=list(self.deck),
            hands=[list(h) for h in self.hands],
            knowledge=[[list(k) for k in hk] for hk in self.knowledge],
            fireworks=list(self.fireworks),
            info_tokens=self.info_tokens,
            life_tokens=self.life_tokens,
            discard_pile=list(self.discard_pile),
            current_player=self.current_player,
            turn=self.turn,
            turns_since_deck_empty=self.turns_since_deck_empty,
            terminal_reason=self.terminal_reason,
            last_move=self.last_move,
        )

    @property
    def is_terminal(self) -> bool:
        return self.terminal_reason is not None

    def played_cards(self) -> list[int]:
        R = self.config.num_ranks
        return [c * R + r for c, top in enumerate(self.fireworks) for r in range(top)]

    def stack_sum(self) -> int:
        return sum(self.fireworks)

    def is_playable(self, card: int) -> bool:
        R = self.config.num_ranks
        return self.fireworks[card // R] == card % R


def legal_actions(state: HanabiState, player: Optional[int] = None) -> list[int]:
    cfg = state.config
    p = state.current_player
    if state.terminal_reason is not None or (player is not None and player != p):
        return []
    n = len(state.hands[p])
    H, C, R = cfg.hand_size, cfg.num_colors, cfg.num_ranks
    actions = list(range(n)) + list(range(H, H + n))
    if state.info_tokens > 0:
        partner = state.hands[1 - p]
        colors = {card // R for card in partner}
        ranks = {card % R for card in partner}
        base_c, base_r = 2 * H, 2 * H + C
        actions.extend(base_c + c for c in sorted(colors))
        actions.extend(base_r + r for r in sorted(ranks))
    return actions


def _check_legal(state: HanabiState, kind: str, index: int) -> None:
    cfg = state.config
    p = state.current_player
    if state.terminal_reason is not None:
        raise IllegalActionError("game is over")
    if kind in (PLAY, DISCARD):
        if index >= len(state.hands[p]):
            raise IllegalActionError(f"{kind} slot {index} is empty")
        return
    if state.info_tokens == 0:
        raise IllegalActionError("hint requires an information token")
    R = cfg.num_ranks
    partner = state.hands[1 - p]
    if kind == HINT_COLOR and all(card // R != index for card in partner):
        raise IllegalActionError(f"partner holds no card of color {index}")
    if kind == HINT_RANK and all(card % R != index for card in partner):
        raise IllegalActionError(f"partner holds no card of rank {index}")


def _apply_inplace(state: HanabiState, action: int) -> float:
    """Mutate ``state`` by one move and return the step reward."""
    cfg = state.config
    kind, index = cfg.decode_action(action)
    _check_legal(state, kind, index)
    p = state.current_player
    R = cfg.num_ranks
    deck_was_empty = not state.deck
    reward = 0.0
    if kind == PLAY or kind == DISCARD:
        hand = state.hands[p]
        card = hand.pop(index)
        state.knowledge[p].pop(index)
        success = False
        if kind == PLAY:
            color, rank = divmod(card, R)
            if state.fireworks[color] == rank:
                state.fireworks[color] += 1
                reward = 1.0
                success = True
                if rank == R - 1 and state.info_tokens < cfg.num_info_tokens:
                    state.info_tokens += 1
            else:
                state.life_tokens -= 1
                state.discard_pile.append(card)
                if state.life_tokens == 0 and cfg.bomb_zero_score:
                    # bombing out wipes the score, so the return of the episode
                    # equals its reported score
                    reward = -float(sum(state.fireworks))
        else:
            state.discard_pile.append(card)
            if state.info_tokens < cfg.num_info_tokens:
                state.info_tokens += 1
        if state.deck:
            hand.append(state.deck.pop())
            state.knowledge[p].append([(1 << cfg.num_colors) - 1, (1 << R) - 1, 0, 0])
        state.last_move = Move(p, kind, index, card, success)
    else:
        state.info_tokens -= 1
        target = 1 - p
        revealed = []
        for i, card in enumerate(state.hands[target]):
            k = state.knowledge[target][i]
            if kind == HINT_COLOR:
                if card // R == index:
                    k[0] = 1 << index
                    k[2] = 1
                    revealed.append(i)
                else:
                    k[0] &= ~(1 << index)
            else:
                if card % R == index:
                    k[1] = 1 << index
                    k[3] = 1
                    revealed.append(i)
                else:
                    k[1] &= ~(1 << index)
        state.last_move = Move(p, kind, index, -1, False, tuple(revealed))

    state.turn += 1
    if deck_was_empty:
        state.turns_since_deck_empty += 1
    if state.life_tokens == 0:
        state.terminal_reason = TerminalReason.BOMBED_OUT
    elif sum(state.fireworks) == cfg.max_score:
        state.terminal_reason = TerminalReason.PERFECT_SCORE
    elif not state.deck and state.turns_since_deck_empty >= cfg.num_players:
        state.terminal_reason = TerminalReason.DECK_EXHAUSTED
    elif state.turn >= cfg.max_turns:
        state.terminal_reason = TerminalReason.MAX_TURNS
    state.current_player = (p + 1) % cfg.num_players
    return reward


def apply_action(state: HanabiState, action: int) -> tuple[HanabiState, float, bool]:
    """Pure transition: returns a new state, the reward and the done flag."""
    nxt = state.copy()
    reward = _apply_inplace(nxt, action)
    return nxt, reward, nxt.is_terminal


def score(state: HanabiState) -> int:
    if state.terminal_reason is TerminalReason.BOMBED_OUT and state.config.bomb_zero_score:
        return 0
    return sum(state.fireworks)


def bombed_out(trajectory: Trajectory) -> bool:
    if not trajectory.is_terminal:
        raise StateError("bombed_out needs a terminal trajectory")
    return trajectory.terminal_reason is TerminalReason.BOMBED_OUT


# -- observations -----------------------------------------------------------------


@dataclass(frozen=True)
class HanabiObservation:
    observer: int
    partner_hand: tuple[int, ...]
    partner_knowledge: tuple[tuple[int, int, int, int], ...]
    own_hand_knowledge: tuple[tuple[int, int, int, int], ...]
    fireworks: tuple[int, ...]
    info_tokens: int
    life_tokens: int
    deck_size: int
    discard_pile: tuple[int, ...]
    last_move: Optional[Move]
    legal_action_mask: bytes
    config: HanabiConfig = field(repr=False, compare=False, default=HANABI_FULL)

    def playable(self, card: int) -> bool:
        R = self.config.num_ranks
        return self.fireworks[card // R] == card % R

    def possibly_playable_only(self, knowledge) -> bool:
        """True when every identity allowed by the hint masks is playable now."""
        cmask, rmask = knowledge[0], knowledge[1]
        cfg = self.config
        for c in range(cfg.num_colors):
            if cmask >> c & 1:
                for r in range(cfg.num_ranks):
                    if rmask >> r & 1 and self.fireworks[c] != r:
                        return False
        return True


class ObservationLayout:
    """Offsets of each block in the 0/1 observation vector.

    Blocks, in order:
      partner_hand        hand_size x card-type one-hot
      partner_hinted      hand_size x (color hinted, rank hinted)
      own_knowledge       hand_size x (present, color-possible[C], rank-possible[R])
      fireworks           colors x one-hot over 0..R
      info_tokens         one-hot over 0..max
      life_tokens         thermometer of length max
      deck                thermometer of length (deck size after the deal)
      discards            per card type, thermometer over its copies
      last_move           kind[4], by-self, slot[H], card[C*R], success, color[C], rank[R], revealed[H]
    """

    def __init__(self, cfg: HanabiConfig):
        H, C, R = cfg.hand_size, cfg.num_colors, cfg.num_ranks
        T = C * R
        sizes = [
            ("partner_hand", H * T),
            ("partner_hinted", 2 * H),
            ("own_knowledge", H * (1 + C + R)),
            ("fireworks", C * (R + 1)),
            ("info_tokens", cfg.num_info_tokens + 1),
            ("life_tokens", cfg.num_life_tokens),
            ("deck", cfg.deck_size - cfg.num_players * H),
            ("discards", C * sum(cfg.cards_per_rank)),
            ("last_move", 4 + 1 + H + T + 1 + C + R + H),
        ]
        self.offsets: dict[str, int] = {}
        pos = 0
        for name, size in sizes:
            self.offsets[name] = pos
            pos += size
        self.sizes = dict(sizes)
        self.size = pos
        # first bit of each card type's discard thermometer
        self.discard_base = []
        base = self.offsets["discards"]
        for card in range(T):
            self.discard_base.append(base)
            base += cfg.card_count(card)


def encode_observation(state: HanabiState, observer: int, layout: ObservationLayout) -> bytes:
    cfg = state.config
    H, C, R = cfg.hand_size, cfg.num_colors, cfg.num_ranks
    T = C * R
    off = layout.offsets
    v = bytearray(layout.size)
    partner = 1 - observer

    base = off["partner_hand"]
    for i, card in enumerate(state.hands[partner]):
        v[base + i * T + card] = 1
    base = off["partner_hinted"]
    for i, k in enumerate(state.knowledge[partner]):
        v[base + 2 * i] = k[2]
        v[base + 2 * i + 1] = k[3]
    base = off["own_knowledge"]
    width = 1 + C + R
    for i, k in enumerate(state.knowledge[observer]):
        j = base + i * width
        v[j] = 1
        cm, rm = k[0], k[1]
        for c in range(C):
            if cm >> c & 1:
                v[j + 1 + c] = 1
        for r in range(R):
            if rm >> r & 1:
                v[j + 1 + C + r] = 1
    base = off["fireworks"]
    for c, top in enumerate(state.fireworks):
        v[base + c * (R + 1) + top] = 1
    v[off["info_tokens"] + state.info_tokens] = 1
    base = off["life_tokens"]
    for i in range(state.life_tokens):
        v[base + i] = 1
    base = off["deck"]
    for i in range(len(state.deck)):
        v[base + i] = 1
    if state.discard_pile:
        seen = [0] * T
        dbase = layout.discard_base
        for card in state.discard_pile:
            v[dbase[card] + seen[card]] = 1
            seen[card] += 1
    m = state.last_move
    if m is not None:
        base = off["last_move"]
        v[base + ACTION_KINDS.index(m.kind)] = 1
        v[base + 4] = 1 if m.player == observer else 0
        base += 5
        if m.kind == PLAY or m.kind == DISCARD:
            v[base + m.index] = 1
            v[base + H + m.card] = 1
            v[base + H + T] = 1 if m.success else 0
        else:
            hint_base = base + H + T + 1
            if m.kind == HINT_COLOR:
                v[hint_base + m.index] = 1
            else:
                v[hint_base + C + m.index] = 1
            for i in m.revealed:
                v[hint_base + C + R + i] = 1
    return bytes(v)


def structured_observation(state: HanabiState, observer: int) -> HanabiObservation:
    cfg = state.config
    mask = bytearray(cfg.num_actions)
    for a in legal_actions(state, observer):
        mask[a] = 1
    return HanabiObservation(
        observer=observer,
        partner_hand=tuple(state.hands[1 - observer]),
        partner_knowledge=tuple(tuple(k) for k in state.knowledge[1 - observer]),
        own_hand_knowledge=tuple(tuple(k) for k in state.knowledge[observer]),
        fireworks=tuple(state.fireworks),
        info_tokens=state.info_tokens,
        life_tokens=state.life_tokens,
        deck_size=len(state.deck),
        discard_pile=tuple(state.discard_pile),
        last_move=state.last_move,
        legal_action_mask=bytes(mask),
        config=cfg,
    )


class HanabiEnv(EnvInterface):
    """EnvInterface adapter around the rule functions above."""

    def __init__(self, config: HanabiConfig = HANABI_MINI):
        self.config = config
        self.env_id = config.name
        self.num_players = config.num_players
        self.action_space_size = config.num_actions
        self.layout = ObservationLayout(config)
        self.observation_encoding_size = self.layout.size
        self.state: Optional[HanabiState] = None
        self._obs_cache: dict[int, bytes] = {}

    def reset(self, seed: int) -> list[bytes]:
        self.state = HanabiState.initial(self.config, seed)
        self._obs_cache = {}
        return [self.observe(p) for p in range(self.num_players)]

    @property
    def current_player(self) -> int:
        return self.state.current_player

    @property
    def terminal_reason(self) -> Optional[TerminalReason]:
        return self.state.terminal_reason

    def legal_actions(self, player: int) -> list[int]:
        return legal_actions(self.state, player)

    def observe(self, player: int) -> bytes:
        obs = self._obs_cache.get(player)
        if obs is None:
            obs = encode_observation(self.state, player, self.layout)
            self._obs_cache[player] = obs
        return obs

    def structured(self, player: int) -> HanabiObservation:
        return structured_observation(self.state, player)

    def step(self, action: int) -> tuple[list[bytes], float, bool]:
        reward = _apply_inplace(self.state, action)
        self._obs_cache = {}
        return _LazyObservations(self), reward, self.state.terminal_reason is not None

    def final_score(self) -> int:
        return score(self.state)

    def action_type(self, action: int) -> str:
        return self.config.decode_action(action)[0]

    def clone_state(self) -> HanabiState:
        return self.state.copy()


class _LazyObservations:
    """Sequence view that encodes a player's observation only when indexed."""

    def __init__(self, env: HanabiEnv):
        self._env = env

    def __len__(self) -> int:
        return self._env.num_players

    def __getitem__(self, player: int) -> bytes:
        if not 0 <= player < self._env.num_players:
            raise IndexError(player)
        return self._env.observe(player)

    def __iter__(self):
        return (self[p] for p in range(len(self)))
