"""Which partner levels a level trains against, and how often."""

from __future__ import annotations

import bisect
import math
import random
from dataclasses import dataclass
from typing import Optional

KLR, CH, SYKLRBR = "klr", "ch", "syklrbr"
PARTNER_RULES = (KLR, CH, SYKLRBR)
DEFAULT_LAMBDA = {CH: 2.0, SYKLRBR: 1.0}


def poisson_pmf(k: int, lam: float) -> float:
    return lam**k * math.exp(-lam) / math.factorial(k)


@dataclass(frozen=True)
class PartnerDistribution:
    weights: dict[int, float]

    def __post_init__(self):
        total = sum(self.weights.values())
        if not math.isclose(total, 1.0, abs_tol=1e-12):
            raise ValueError(f"partner weights sum to {total}, not 1")
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("partner weights must be non-negative")

    @property
    def levels(self) -> list[int]:
        return sorted(self.weights)

    def probabilities(self) -> list[float]:
        return [self.weights[lv] for lv in self.levels]

    def sample(self, rng: random.Random) -> int:
        levels = self.levels
        if len(levels) == 1:
            return levels[0]
        cdf = []
        acc = 0.0
        for lv in levels:
            acc += self.weights[lv]
            cdf.append(acc)
        i = bisect.bisect_right(cdf, rng.random() * acc)
        return levels[min(i, len(levels) - 1)]


def _normalised(raw: dict[int, float]) -> PartnerDistribution:
    total = sum(raw.values())
    return PartnerDistribution({lv: w / total for lv, w in raw.items()})


def poisson_partner_weights(
    rule: str, agent_level: int, num_levels: int, lam: Optional[float] = None
) -> PartnerDistribution:
    """Partner-level distribution for one trainee.

    klr      point mass on ``agent_level - 1``.
    ch       level 1 plays level 0 only; level i > 1 weights partner j in 1..i-1
             by Poisson(lam=2) mass at j, renormalised (level 0 excluded).
    syklrbr  the best response over a ``num_levels`` KLR weights partner j in
             0..num_levels by Poisson(lam=1) mass at ``num_levels - j``;
             ``agent_level`` is ignored.
    """
    if rule not in PARTNER_RULES:
        raise ValueError(f"unknown partner rule {rule!r}")
    if num_levels < 1:
        raise ValueError("num_levels must be >= 1")
    lam = DEFAULT_LAMBDA.get(rule) if lam is None else lam
    if rule == SYKLRBR:
        if lam <= 0:
            raise ValueError("lambda must be positive")
        return _normalised({j: poisson_pmf(num_levels - j, lam) for j in range(num_levels + 1)})
    if not 1 <= agent_level <= num_levels:
        raise ValueError(f"agent_level {agent_level} outside 1..{num_levels}")
    if rule == KLR:
        return PartnerDistribution({agent_level - 1: 1.0})
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if agent_level == 1:
        return PartnerDistribution({0: 1.0})
    return _normalised({j: poisson_pmf(j, lam) for j in range(1, agent_level)})


def partner_levels(rule: str, agent_level: int, num_levels: int) -> list[int]:
    """The partner set for ``agent_level`` (the BR uses ``num_levels + 1``)."""
    if rule == KLR:
        return [agent_level - 1]
    if rule == CH:
        return list(range(agent_level))
    if rule == SYKLRBR:
        if agent_level > num_levels:
            return list(range(num_levels + 1))
        return [agent_level - 1]
    raise ValueError(f"unknown partner rule {rule!r}")
