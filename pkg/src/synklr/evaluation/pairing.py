from __future__ import annotations

import hashlib
import math
import struct
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..env_core import EnvInterface, TerminalReason, Trajectory
from ..learner import Policy, run_actor

ACTION_TYPES = ("play", "discard", "hint_color", "hint_rank")
DEFAULT_EVAL_GAMES = 10_000


def game_seed(seed: int, deal: int) -> int:
    h = hashlib.blake2b(struct.pack("<qq", seed, deal), digest_size=8, person=b"synklr-eval")
    return int.from_bytes(h.digest(), "little")


def _stderr(values: Sequence[float]) -> float:
    n = len(values)
    if n < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(n))


@dataclass
class EvalReport:
    """Aggregate of one seat-balanced pairing. Action-type histograms are
    keyed by pairing member: 0 for ``policy_a``, 1 for ``policy_b``."""

    pairing_id: str
    num_games: int
    mean_score: float
    stderr: float
    bombout_rate: float
    bombout_stderr: float
    score_histogram: dict[int, int]
    action_type_histogram: dict[int, dict[str, int]]
    scores: list[float] = field(default_factory=list, repr=False)
    bombouts: list[bool] = field(default_factory=list, repr=False)

    @classmethod
    def from_games(cls, pairing_id: str, scores: Sequence[float], bombouts: Sequence[bool],
                   action_counts: dict[int, Counter]) -> "EvalReport":
        n = len(scores)
        hist = Counter(int(round(s)) for s in scores)
        bo = [float(b) for b in bombouts]
        return cls(
            pairing_id=pairing_id,
            num_games=n,
            mean_score=float(np.mean(scores)) if n else float("nan"),
            stderr=_stderr(scores),
            bombout_rate=float(np.mean(bo)) if n else float("nan"),
            bombout_stderr=_stderr(bo),
            score_histogram=dict(sorted(hist.items())),
            action_type_histogram={m: dict(sorted(c.items())) for m, c in sorted(action_counts.items())},
            scores=list(scores),
            bombouts=list(bombouts),
        )

    def action_type_fractions(self, member: int) -> dict[str, float]:
        counts = self.action_type_histogram.get(member, {})
        total = sum(counts.values())
        return {t: (counts.get(t, 0) / total if total else 0.0) for t in sorted(counts)}


def episode_score(traj: Trajectory) -> float:
    return float(traj.final_score) if traj.final_score is not None else float(traj.total_return)


def _play_chunk(args) -> list[tuple[float, bool, list[tuple[int, str]]]]:
    policies, env, seed, deals = args
    a, b = policies
    out = []
    for g in deals:
        deal, swapped = divmod(g, 2)
        seats = [b, a] if swapped else [a, b]
        member = [1, 0] if swapped else [0, 1]
        log: list = []
        traj = run_actor(env, seats, [0.0, 0.0], game_seed(seed, deal), action_log=log)
        acts = [(member[p], env.action_type(act)) for p, act in log]
        out.append((episode_score(traj), traj.terminal_reason == TerminalReason.BOMBED_OUT, acts))
    return out


def evaluate_pairing(policy_a: Policy, policy_b: Policy, env: EnvInterface, num_games: int = DEFAULT_EVAL_GAMES,
                     seed: int = 0, pairing_id: Optional[str] = None, workers: int = 1) -> EvalReport:
    """Greedy evaluation; games 2j and 2j+1 share a deal with the seats swapped.

    Per-game seeds are fixed up front, so the report does not depend on
    ``workers`` or completion order.
    """
    if num_games < 2 or num_games % 2:
        raise ValueError("num_games must be a positive even number (both seat orders per deal)")
    pairing_id = pairing_id or f"{policy_a.name}|{policy_b.name}"
    games = list(range(num_games))
    if workers > 1:
        chunks = [games[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_play_chunk, [((policy_a, policy_b), env, seed, c) for c in chunks]))
        by_game = {}
        for chunk, res in zip(chunks, parts):
            by_game.update(zip(chunk, res))
        results = [by_game[g] for g in games]
    else:
        results = _play_chunk(((policy_a, policy_b), env, seed, games))
    counts: dict[int, Counter] = {0: Counter(), 1: Counter()}
    for _, _, acts in results:
        for member, kind in acts:
            counts[member][kind] += 1
    return EvalReport.from_games(pairing_id, [r[0] for r in results], [r[1] for r in results], counts)


@dataclass
class CrossPlayResult:
    reports: list[list[EvalReport]]

    @property
    def n(self) -> int:
        return len(self.reports)

    @property
    def sp_mean(self) -> float:
        return float(np.mean([self.reports[i][i].mean_score for i in range(self.n)]))

    @property
    def xp_mean(self) -> float:
        return float(np.mean([r.mean_score for r in self.off_diagonal()]))

    @property
    def sp_bombout(self) -> float:
        return float(np.mean([self.reports[i][i].bombout_rate for i in range(self.n)]))

    @property
    def xp_bombout(self) -> float:
        return float(np.mean([r.bombout_rate for r in self.off_diagonal()]))

    def off_diagonal(self) -> list[EvalReport]:
        return [self.reports[i][j] for i in range(self.n) for j in range(self.n) if i != j]

    def row_xp(self, i: int) -> float:
        return float(np.mean([self.reports[i][j].mean_score for j in range(self.n) if j != i]))

    def row_xp_bombout(self, i: int) -> float:
        return float(np.mean([self.reports[i][j].bombout_rate for j in range(self.n) if j != i]))


def crossplay_matrix(policies: Sequence[Policy], env: EnvInterface, num_games: int = DEFAULT_EVAL_GAMES,
                     partners: Optional[Sequence[Policy]] = None, seed: int = 0,
                     run_ids: Optional[Sequence[str]] = None, workers: int = 1) -> CrossPlayResult:
    """Entry (i, j) pairs run i's policy with run j's partner (``partners``
    defaults to ``policies``). The diagonal is self-play, the rest cross-play."""
    partners = list(policies) if partners is None else list(partners)
    if len(policies) < 2:
        raise ValueError("cross-play needs at least two independently seeded runs")
    if len(partners) != len(policies):
        raise ValueError("need one partner per run")
    ids = list(run_ids) if run_ids is not None else [str(i) for i in range(len(policies))]
    reports = [
        [evaluate_pairing(p, q, env, num_games, seed, f"{ids[i]}|{ids[j]}", workers) for j, q in enumerate(partners)]
        for i, p in enumerate(policies)
    ]
    return CrossPlayResult(reports)
