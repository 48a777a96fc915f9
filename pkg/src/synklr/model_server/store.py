from __future__ import annotations

import logging
import threading
import time
from collections import deque
from typing import Iterable, Optional

from ..partners import partner_levels
from .protocol import PolicySnapshot, Status, checksum

log = logging.getLogger(__name__)

VIRTUAL_LEVEL = 0
DEFAULT_RING = 16


class ModelServerError(RuntimeError):
    status = Status.INTERNAL


class NotReadyError(ModelServerError):
    status = Status.NOT_READY


class RegistrationError(ModelServerError):
    status = Status.UNREGISTERED


class ChecksumError(ModelServerError):
    status = Status.BAD_CHECKSUM


class EvictedError(ModelServerError):
    status = Status.EVICTED


class MalformedError(ModelServerError):
    status = Status.MALFORMED


ERRORS_BY_STATUS = {
    cls.status: cls
    for cls in (NotReadyError, RegistrationError, ChecksumError, EvictedError, MalformedError, ModelServerError)
}


def virtual_snapshot() -> PolicySnapshot:
    return PolicySnapshot(VIRTUAL_LEVEL, 0, b"", checksum(b""))


class ModelStore:
    """In-memory versioned policy registers, one per level.

    Each level keeps its last ``ring_size`` pushed versions (so a lockstep
    client can fetch an exact round) plus a separate archive ring written by
    the snapshot schedule. All operations hold one lock; a fetch concurrent
    with a push therefore sees either the old or the new version.
    """

    def __init__(self, levels: Iterable[int] = (), ring_size: int = DEFAULT_RING):
        if ring_size < 1:
            raise ValueError("ring_size must be >= 1")
        self.ring_size = ring_size
        self._cond = threading.Condition()
        self._versions: dict[int, deque[PolicySnapshot]] = {}
        self._counters: dict[int, int] = {}
        self._archive: dict[int, deque[PolicySnapshot]] = {}
        self._archive_counters: dict[int, int] = {}
        for lv in levels:
            self.register(lv)

    def register(self, level_id: int) -> None:
        if level_id == VIRTUAL_LEVEL:
            raise RegistrationError("level 0 is the built-in uniform policy and cannot be registered")
        with self._cond:
            self._versions.setdefault(level_id, deque(maxlen=self.ring_size))
            self._counters.setdefault(level_id, 0)
            self._archive.setdefault(level_id, deque(maxlen=self.ring_size))
            self._archive_counters.setdefault(level_id, 0)

    @property
    def levels(self) -> list[int]:
        with self._cond:
            return sorted(self._versions)

    def _check(self, level_id: int) -> None:
        if level_id not in self._versions:
            raise RegistrationError(f"level {level_id} is not registered")

    def push(self, level_id: int, payload: bytes, expected_checksum: Optional[int] = None) -> int:
        payload = bytes(payload)
        snap_sum = checksum(payload)
        if expected_checksum is not None and expected_checksum != snap_sum:
            raise ChecksumError(f"push to level {level_id}: payload checksum mismatch")
        with self._cond:
            self._check(level_id)
            version = self._counters[level_id] + 1
            self._counters[level_id] = version
            self._versions[level_id].append(PolicySnapshot(level_id, version, payload, snap_sum))
            self._cond.notify_all()
        log.debug("push level=%d version=%d bytes=%d", level_id, version, len(payload))
        return version

    def fetch(self, level_id: int, version: int = 0) -> PolicySnapshot:
        if level_id == VIRTUAL_LEVEL:
            return virtual_snapshot()
        with self._cond:
            self._check(level_id)
            return self._fetch_locked(level_id, version)

    def _fetch_locked(self, level_id: int, version: int) -> PolicySnapshot:
        ring = self._versions[level_id]
        if not ring:
            raise NotReadyError(f"level {level_id} has no pushed snapshot yet")
        if version == 0:
            return ring[-1]
        if version > ring[-1].version:
            raise NotReadyError(f"level {level_id} is at version {ring[-1].version} < {version}")
        for snap in ring:
            if snap.version == version:
                return snap
        raise EvictedError(f"level {level_id} version {version} is no longer retained")

    def fetch_partner_set(self, level_id: int, rule: str, num_levels: int, version: int = 0) -> list[PolicySnapshot]:
        """Latest (or round-``version``) snapshot of each partner level, lowest first."""
        wanted = partner_levels(rule, level_id, num_levels)
        with self._cond:
            out = []
            for lv in wanted:
                if lv == VIRTUAL_LEVEL:
                    out.append(virtual_snapshot())
                else:
                    self._check(lv)
                    out.append(self._fetch_locked(lv, version))
        log.debug("fetch_set level=%d rule=%s -> %s", level_id, rule, [(s.level_id, s.version) for s in out])
        return out

    def list_versions(self) -> dict[int, tuple[int, int]]:
        with self._cond:
            return {lv: (self._counters[lv], len(self._archive[lv])) for lv in sorted(self._versions)}

    def wait_for_version(self, levels: Iterable[int], version: int, timeout: float = 60.0) -> None:
        levels = [lv for lv in levels if lv != VIRTUAL_LEVEL]
        deadline = time.monotonic() + timeout
        with self._cond:
            for lv in levels:
                self._check(lv)
            while any(self._counters[lv] < version for lv in levels):
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    lagging = [lv for lv in levels if self._counters[lv] < version]
                    raise NotReadyError(f"levels {lagging} did not reach version {version}")
                self._cond.wait(remaining)

    def archive(self, level_id: int, payload: bytes, expected_checksum: Optional[int] = None) -> int:
        """Append to the level's snapshot ring; the oldest entry is evicted when full."""
        payload = bytes(payload)
        snap_sum = checksum(payload)
        if expected_checksum is not None and expected_checksum != snap_sum:
            raise ChecksumError(f"archive to level {level_id}: payload checksum mismatch")
        with self._cond:
            self._check(level_id)
            seq = self._archive_counters[level_id] + 1
            self._archive_counters[level_id] = seq
            self._archive[level_id].append(PolicySnapshot(level_id, seq, payload, snap_sum))
        return seq

    def snapshot_ring(self, level_id: int) -> list[PolicySnapshot]:
        with self._cond:
            self._check(level_id)
            return list(self._archive[level_id])

    def state_dict(self) -> dict:
        with self._cond:
            return {
                "ring_size": self.ring_size,
                "versions": {lv: list(ring) for lv, ring in self._versions.items()},
                "counters": dict(self._counters),
                "archive": {lv: list(ring) for lv, ring in self._archive.items()},
                "archive_counters": dict(self._archive_counters),
            }

    def load_state_dict(self, state: dict) -> None:
        with self._cond:
            self.ring_size = state["ring_size"]
            self._versions = {lv: deque(r, maxlen=self.ring_size) for lv, r in state["versions"].items()}
            self._archive = {lv: deque(r, maxlen=self.ring_size) for lv, r in state["archive"].items()}
            self._counters = dict(state["counters"])
            self._archive_counters = dict(state["archive_counters"])
            self._cond.notify_all()
