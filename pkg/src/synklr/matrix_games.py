"""Common-payoff matrix games with exact k-level / cognitive-hierarchy oracles."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .env_core import EnvInterface, IllegalActionError, TerminalReason
from .partners import CH, poisson_partner_weights


@dataclass(frozen=True)
class MatrixGame:
    payoff: np.ndarray
    name: str = "matrix"

    def __post_init__(self):
        p = np.array(self.payoff, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1] or p.shape[0] < 2:
            raise ValueError(f"payoff must be an N x N matrix with N >= 2, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("payoff entries must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "payoff", p)

    @property
    def n(self) -> int:
        return self.payoff.shape[0]

    def expected_payoffs(self, partner: np.ndarray) -> np.ndarray:
        """Row player's expected payoff of each action against a mixed partner."""
        return self.payoff @ np.asarray(partner, dtype=float)


def load_matrix_game(path: str | Path, name: Optional[str] = None) -> MatrixGame:
    """Whitespace-separated rows; ``#`` starts a comment."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rows.append([float(x) for x in line.split()])
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ValueError(f"{path}: ragged or empty matrix")
    return MatrixGame(np.array(rows), name or Path(path).stem)


def lever_game(n: int = 3, odd_value: float = 0.9) -> MatrixGame:
    diag = np.ones(n)
    diag[0] = odd_value
    return MatrixGame(np.diag(diag), f"lever{n}")


def _point_mass(n: int, i: int) -> np.ndarray:
    v = np.zeros(n)
    v[i] = 1.0
    return v


def best_response(game: MatrixGame, partner: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximiser: lexicographic tie-breaking
    return _point_mass(game.n, int(np.argmax(game.expected_payoffs(partner))))


def exact_klr_level(game: MatrixGame, k: int) -> np.ndarray:
    if k < 0:
        raise ValueError("k must be >= 0")
    policy = np.full(game.n, 1.0 / game.n)
    for _ in range(k):
        nxt = best_response(game, policy)
        if np.array_equal(nxt, policy):
            break
        policy = nxt
    return policy


def exact_ch_level(game: MatrixGame, k: int, lam: float = 2.0) -> np.ndarray:
    if k < 1:
        raise ValueError("k must be >= 1")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    levels = [np.full(game.n, 1.0 / game.n)]
    for i in range(1, k + 1):
        dist = poisson_partner_weights(CH, i, i, lam)
        mixture = sum(w * levels[j] for j, w in dist.weights.items())
        levels.append(best_response(game, mixture))
    return levels[k]


def random_symmetric_game(
    rng: np.random.Generator, n: int = 3, min_gap: float = 0.05, max_levels: int = 3
) -> MatrixGame:
    """Symmetric common-payoff game whose level-1..max_levels best responses are
    separated from the runner-up by at least ``min_gap`` (no near-ties)."""
    while True:
        a = rng.uniform(0.0, 1.0, size=(n, n))
        payoff = (a + a.T) / 2.0
        game = MatrixGame(payoff, "random")
        policy = np.full(n, 1.0 / n)
        ok = True
        for _ in range(max_levels):
            ev = np.sort(game.expected_payoffs(policy))
            if ev[-1] - ev[-2] < min_gap:
                ok = False
                break
            policy = best_response(game, policy)
        if ok:
            return game


def verification_suite(seed: int = 0, size: int = 20, n: int = 3) -> list[MatrixGame]:
    rng = np.random.default_rng(seed)
    games = []
    for i in range(size):
        g = random_symmetric_game(rng, n)
        games.append(MatrixGame(g.payoff, f"random{i:02d}"))
    return games


class MatrixGameEnv(EnvInterface):
    """One-shot game played as two turns; seat 1 does not see seat 0's move.

    Observations are a single constant bit, so a learned policy is seat-agnostic.
    Payoffs are treated as symmetric: levels are computed for the row player.
    """

    num_players = 2
    observation_encoding_size = 1

    def __init__(self, game: MatrixGame):
        self.game = game
        self.env_id = f"matrix:{game.name}"
        self.action_space_size = game.n
        self._moves: list[int] = []
        self._reason: Optional[TerminalReason] = None

    def reset(self, seed: int) -> list[bytes]:
        self._moves = []
        self._reason = None
        return [self.observe(p) for p in range(2)]

    @property
    def current_player(self) -> int:
        return len(self._moves)

    @property
    def terminal_reason(self) -> Optional[TerminalReason]:
        return self._reason

    def legal_actions(self, player: int) -> list[int]:
        if self._reason is not None or player != len(self._moves):
            return []
        return list(range(self.game.n))

    def observe(self, player: int) -> bytes:
        return b"\x01"

    def step(self, action: int) -> tuple[list[bytes], float, bool]:
        if self._reason is not None:
            raise IllegalActionError("episode is over")
        if not 0 <= action < self.game.n:
            raise IllegalActionError(f"action {action} outside [0, {self.game.n})")
        self._moves.append(action)
        if len(self._moves) < 2:
            return [b"\x01", b"\x01"], 0.0, False
        self._reason = TerminalReason.MAX_TURNS
        reward = float(self.game.payoff[self._moves[0], self._moves[1]])
        return [b"\x01", b"\x01"], reward, True
