"""Framed binary protocol for the policy store.

Request frame::

    u32 BE length (of everything after this field)
    u8  opcode            PUSH=1 FETCH=2 FETCH_SET=3 LIST=4 SNAPSHOT_RING=5
    u32 BE level_id
    u64 BE version        0 means "latest" on FETCH / FETCH_SET
    u64 BE checksum       BLAKE2b-64 of the payload (PUSH / SNAPSHOT_RING writes)
    ...    payload

Response frame::

    u32 BE length
    u8  opcode | 0x80
    u8  status            see Status
    u32 BE level_id | u64 BE version | u64 BE checksum
    ...    payload

Snapshot lists (FETCH_SET responses, SNAPSHOT_RING reads) are
``u32 count`` followed by ``u32 level | u64 version | u64 checksum | u32 size | bytes``.
FETCH_SET requests carry ``u8 rule (1 klr, 2 ch, 3 syklrbr) | u32 num_levels``.
LIST responses carry ``u32 count`` then ``u32 level | u64 latest | u32 archived``.
"""

from __future__ import annotations

import hashlib
import socket
import struct
from dataclasses import dataclass
from enum import IntEnum

MAX_FRAME = 1 << 30
REQ_HEADER = struct.Struct(">BIQQ")
RESP_HEADER = struct.Struct(">BBIQQ")
_LEN = struct.Struct(">I")
_SNAP = struct.Struct(">IQQI")
_LIST = struct.Struct(">IQI")
RULE_CODES = {"klr": 1, "ch": 2, "syklrbr": 3}
CODE_RULES = {v: k for k, v in RULE_CODES.items()}


class Op(IntEnum):
    PUSH = 1
    FETCH = 2
    FETCH_SET = 3
    LIST = 4
    SNAPSHOT_RING = 5


class Status(IntEnum):
    OK = 0
    NOT_READY = 1
    UNREGISTERED = 2
    BAD_CHECKSUM = 3
    MALFORMED = 4
    EVICTED = 5
    INTERNAL = 6


def checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big")


@dataclass(frozen=True)
class PolicySnapshot:
    level_id: int
    version: int
    payload: bytes
    checksum: int

    @classmethod
    def make(cls, level_id: int, version: int, payload: bytes) -> "PolicySnapshot":
        return cls(level_id, version, bytes(payload), checksum(payload))

    @property
    def is_virtual(self) -> bool:
        """Level 0 (uniform random) is never stored; it travels as an empty marker."""
        return self.level_id == 0

    def valid(self) -> bool:
        return checksum(self.payload) == self.checksum


def encode_request(op: int, level_id: int = 0, version: int = 0, payload: bytes = b"",
                   check: int | None = None) -> bytes:
    if check is None:
        check = checksum(payload) if payload else 0
    body = REQ_HEADER.pack(op, level_id, version, check) + payload
    return _LEN.pack(len(body)) + body


def encode_response(op: int, status: int, level_id: int = 0, version: int = 0,
                    payload: bytes = b"", check: int | None = None) -> bytes:
    if check is None:
        check = checksum(payload) if payload else 0
    body = RESP_HEADER.pack((op | 0x80) & 0xFF, status, level_id, version, check) + payload
    return _LEN.pack(len(body)) + body


def encode_snapshots(snaps) -> bytes:
    parts = [struct.pack(">I", len(snaps))]
    for s in snaps:
        parts.append(_SNAP.pack(s.level_id, s.version, s.checksum, len(s.payload)))
        parts.append(s.payload)
    return b"".join(parts)


def decode_snapshots(data: bytes) -> list[PolicySnapshot]:
    (count,) = struct.unpack_from(">I", data, 0)
    pos = 4
    out = []
    for _ in range(count):
        level, version, check, size = _SNAP.unpack_from(data, pos)
        pos += _SNAP.size
        out.append(PolicySnapshot(level, version, bytes(data[pos:pos + size]), check))
        pos += size
    if pos != len(data):
        raise ValueError("trailing bytes in snapshot list")
    return out


def encode_listing(rows) -> bytes:
    return struct.pack(">I", len(rows)) + b"".join(_LIST.pack(*r) for r in rows)


def decode_listing(data: bytes) -> dict[int, tuple[int, int]]:
    (count,) = struct.unpack_from(">I", data, 0)
    out = {}
    for i in range(count):
        level, latest, archived = _LIST.unpack_from(data, 4 + i * _LIST.size)
        out[level] = (latest, archived)
    return out


def encode_rule(rule: str, num_levels: int) -> bytes:
    return struct.pack(">BI", RULE_CODES[rule], num_levels)


def decode_rule(payload: bytes) -> tuple[str, int]:
    code, num_levels = struct.unpack(">BI", payload)
    return CODE_RULES[code], num_levels


def recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 20))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> bytes:
    (length,) = _LEN.unpack(recv_exact(sock, 4))
    if length > MAX_FRAME:
        raise ValueError(f"frame of {length} bytes exceeds limit")
    return recv_exact(sock, length)
