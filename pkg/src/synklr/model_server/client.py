from __future__ import annotations

import logging
import socket
import threading
import time
from typing import Iterable, Optional

from .protocol import (
    RESP_HEADER,
    Op,
    PolicySnapshot,
    Status,
    checksum,
    decode_listing,
    decode_snapshots,
    encode_request,
    encode_rule,
    read_frame,
)
from .store import ERRORS_BY_STATUS, VIRTUAL_LEVEL, ChecksumError, NotReadyError, RegistrationError

log = logging.getLogger(__name__)


class ServerUnavailableError(ConnectionError):
    pass


class RemoteStore:
    """Client with the ModelStore API, speaking the framed protocol.

    Connection failures are retried with exponential backoff (``retries``
    attempts, capped at ``max_backoff`` seconds) and then raised as
    ServerUnavailableError. Payload checksums are re-verified on receipt.
    """

    def __init__(self, address: tuple[str, int], timeout: float = 30.0, retries: int = 6,
                 backoff: float = 0.05, max_backoff: float = 2.0):
        self.address = (address[0], int(address[1]))
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.max_backoff = max_backoff
        self._sock: Optional[socket.socket] = None
        self._lock = threading.Lock()

    def _connect(self) -> socket.socket:
        if self._sock is None:
            sock = socket.create_connection(self.address, timeout=self.timeout)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._sock = sock
        return self._sock

    def close(self) -> None:
        with self._lock:
            if self._sock is not None:
                self._sock.close()
                self._sock = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def request_raw(self, frame: bytes) -> tuple[int, int, int, int, int, bytes]:
        delay = self.backoff
        last: Optional[Exception] = None
        for attempt in range(self.retries):
            with self._lock:
                try:
                    sock = self._connect()
                    sock.sendall(frame)
                    body = read_frame(sock)
                    return RESP_HEADER.unpack_from(body) + (body[RESP_HEADER.size:],)
                except (ConnectionError, OSError) as exc:
                    last = exc
                    if self._sock is not None:
                        self._sock.close()
                        self._sock = None
            log.debug("server %s unreachable (attempt %d): %s", self.address, attempt + 1, last)
            time.sleep(delay)
            delay = min(delay * 2, self.max_backoff)
        raise ServerUnavailableError(f"model server {self.address} unreachable after {self.retries} attempts: {last}")

    def _call(self, op: Op, level: int = 0, version: int = 0, payload: bytes = b"", check=None):
        _, status, lv, ver, chk, body = self.request_raw(encode_request(op, level, version, payload, check))
        if status != Status.OK:
            err = ERRORS_BY_STATUS.get(Status(status), ERRORS_BY_STATUS[Status.INTERNAL])
            raise err(body.decode(errors="replace"))
        return lv, ver, chk, body

    # -- ModelStore API -------------------------------------------------------

    def register(self, level_id: int) -> None:
        """Levels are registered server-side at startup; this only checks."""
        if level_id not in self.list_versions():
            raise RegistrationError(f"level {level_id} is not registered on {self.address}")

    def push(self, level_id: int, payload: bytes, expected_checksum: Optional[int] = None) -> int:
        payload = bytes(payload)
        check = checksum(payload) if expected_checksum is None else expected_checksum
        _, version, _, _ = self._call(Op.PUSH, level_id, 0, payload, check)
        return version

    def fetch(self, level_id: int, version: int = 0) -> PolicySnapshot:
        lv, ver, chk, body = self._call(Op.FETCH, level_id, version)
        snap = PolicySnapshot(lv, ver, body, chk)
        if not snap.valid():
            raise ChecksumError(f"corrupt payload for level {lv} version {ver}")
        return snap

    def fetch_partner_set(self, level_id: int, rule: str, num_levels: int, version: int = 0) -> list[PolicySnapshot]:
        _, _, _, body = self._call(Op.FETCH_SET, level_id, version, encode_rule(rule, num_levels), 0)
        snaps = decode_snapshots(body)
        for s in snaps:
            if not s.valid():
                raise ChecksumError(f"corrupt payload for level {s.level_id} version {s.version}")
        return snaps

    def list_versions(self) -> dict[int, tuple[int, int]]:
        _, _, _, body = self._call(Op.LIST)
        return decode_listing(body)

    def wait_for_version(self, levels: Iterable[int], version: int, timeout: float = 60.0,
                         poll: float = 0.002) -> None:
        levels = [lv for lv in levels if lv != VIRTUAL_LEVEL]
        deadline = time.monotonic() + timeout
        while True:
            listing = self.list_versions()
            missing = [lv for lv in levels if lv not in listing]
            if missing:
                raise RegistrationError(f"levels {missing} are not registered")
            if all(listing[lv][0] >= version for lv in levels):
                return
            if time.monotonic() > deadline:
                raise NotReadyError(f"levels did not reach version {version} within {timeout}s")
            time.sleep(poll)
            poll = min(poll * 1.5, 0.05)

    def archive(self, level_id: int, payload: bytes, expected_checksum: Optional[int] = None) -> int:
        payload = bytes(payload)
        if not payload:
            raise ValueError("cannot archive an empty payload")
        check = checksum(payload) if expected_checksum is None else expected_checksum
        _, seq, _, _ = self._call(Op.SNAPSHOT_RING, level_id, 0, payload, check)
        return seq

    def snapshot_ring(self, level_id: int) -> list[PolicySnapshot]:
        _, _, _, body = self._call(Op.SNAPSHOT_RING, level_id)
        snaps = decode_snapshots(body)
        for s in snaps:
            if not s.valid():
                raise ChecksumError(f"corrupt archived payload for level {s.level_id}")
        return snaps
