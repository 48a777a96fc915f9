from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

MIN_PRIORITY = 1e-6


@dataclass
class ReplayBatch:
    indices: np.ndarray
    items: list[Any]
    weights: np.ndarray


class PrioritizedReplay:
    """Fixed-capacity ring of (item, priority) with proportional sampling.

    P(i) = p_i ** priority_exponent / sum_j p_j ** priority_exponent, and the
    importance weight of a draw is (1 / (size * P(i))) ** importance_weight_exponent,
    divided by the largest weight in its batch. Inserts, samples and priority
    updates are serialised by one lock so actors and the learner can share it.
    """

    def __init__(self, capacity: int, priority_exponent: float = 0.9, importance_weight_exponent: float = 0.6):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.priority_exponent = priority_exponent
        self.importance_weight_exponent = importance_weight_exponent
        self._items: list[Any] = [None] * capacity
        self._priority = np.zeros(capacity)
        self._next = 0
        self._size = 0
        self._max_priority = 1.0
        self.frames_added = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return self._size

    def add(self, item: Any, priority: Optional[float] = None, frames: int = 0) -> int:
        with self._lock:
            idx = self._next
            p = self._max_priority if priority is None else max(float(priority), MIN_PRIORITY)
            self._items[idx] = item
            self._priority[idx] = p
            self._max_priority = max(self._max_priority, p)
            self._next = (idx + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)
            self.frames_added += frames
            return idx

    def probabilities(self) -> np.ndarray:
        with self._lock:
            return self._probabilities()

    def _probabilities(self) -> np.ndarray:
        scaled = self._priority[: self._size] ** self.priority_exponent
        return scaled / scaled.sum()

    def sample(self, batch_size: int, rng: np.random.Generator) -> ReplayBatch:
        with self._lock:
            if self._size == 0:
                raise ValueError("cannot sample from an empty replay buffer")
            probs = self._probabilities()
            # inverse-CDF draw; cheaper than Generator.choice(p=...) which re-validates p
            cdf = np.cumsum(probs)
            cdf[-1] = 1.0
            idx = np.searchsorted(cdf, rng.random(batch_size), side="right")
            idx = np.minimum(idx, self._size - 1)
            w = (1.0 / (self._size * probs[idx])) ** self.importance_weight_exponent
            w /= w.max()
            return ReplayBatch(idx, [self._items[i] for i in idx], w)

    def update_priorities(self, indices, priorities) -> None:
        with self._lock:
            for i, p in zip(indices, priorities):
                p = max(float(p), MIN_PRIORITY)
                self._priority[i] = p
                if p > self._max_priority:
                    self._max_priority = p

    def items(self) -> list[Any]:
        with self._lock:
            if self._size < self.capacity:
                return list(self._items[: self._size])
            return self._items[self._next:] + self._items[: self._next]

    def state_dict(self) -> dict:
        with self._lock:
            return {
                "items": list(self._items),
                "priority": self._priority.copy(),
                "next": self._next,
                "size": self._size,
                "max_priority": self._max_priority,
                "frames_added": self.frames_added,
            }

    def load_state_dict(self, state: dict) -> None:
        with self._lock:
            self._items = list(state["items"])
            self._priority = state["priority"].copy()
            self._next = state["next"]
            self._size = state["size"]
            self._max_priority = state["max_priority"]
            self.frames_added = state["frames_added"]
