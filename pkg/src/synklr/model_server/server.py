from __future__ import annotations

import logging
import socket
import socketserver
import struct
import threading
from typing import Iterable, Optional

from .protocol import (
    REQ_HEADER,
    Op,
    Status,
    decode_rule,
    encode_listing,
    encode_response,
    encode_snapshots,
    read_frame,
)
from .store import DEFAULT_RING, ModelServerError, ModelStore

log = logging.getLogger(__name__)


def handle_request(store: ModelStore, frame: bytes) -> bytes:
    """Dispatch one request frame body and return the full response frame."""
    if len(frame) < REQ_HEADER.size:
        return encode_response(0, Status.MALFORMED, payload=b"short header")
    op, level, version, check = REQ_HEADER.unpack_from(frame)
    payload = frame[REQ_HEADER.size:]
    try:
        op = Op(op)
    except ValueError:
        return encode_response(op, Status.MALFORMED, level, payload=f"unknown opcode {op}".encode())
    try:
        if op is Op.PUSH:
            v = store.push(level, payload, check)
            log.info("push level=%d version=%d bytes=%d", level, v, len(payload))
            return encode_response(op, Status.OK, level, v, check=check)
        if op is Op.FETCH:
            snap = store.fetch(level, version)
            log.info("fetch level=%d version=%d", level, snap.version)
            return encode_response(op, Status.OK, snap.level_id, snap.version, snap.payload, snap.checksum)
        if op is Op.FETCH_SET:
            try:
                rule, num_levels = decode_rule(payload)
            except (struct.error, KeyError):
                return encode_response(op, Status.MALFORMED, level, payload=b"bad partner rule")
            snaps = store.fetch_partner_set(level, rule, num_levels, version)
            log.info("fetch_set level=%d rule=%s versions=%s", level, rule, [s.version for s in snaps])
            return encode_response(op, Status.OK, level, version, encode_snapshots(snaps))
        if op is Op.LIST:
            rows = [(lv, latest, archived) for lv, (latest, archived) in store.list_versions().items()]
            return encode_response(op, Status.OK, payload=encode_listing(rows))
        # SNAPSHOT_RING: a payload archives it, an empty request reads the ring back
        if payload:
            seq = store.archive(level, payload, check)
            log.info("archive level=%d seq=%d", level, seq)
            return encode_response(op, Status.OK, level, seq, check=check)
        return encode_response(op, Status.OK, level, payload=encode_snapshots(store.snapshot_ring(level)))
    except ModelServerError as exc:
        return encode_response(op, exc.status, level, payload=str(exc).encode())
    except (ValueError, struct.error) as exc:
        return encode_response(op, Status.MALFORMED, level, payload=str(exc).encode())


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        sock: socket.socket = self.request
        store = self.server.store
        while True:
            try:
                frame = read_frame(sock)
            except (ConnectionError, OSError):
                return
            except ValueError as exc:
                # oversize length prefix: the stream can't be resynchronised
                log.warning("closing %s: %s", self.client_address, exc)
                return
            try:
                sock.sendall(handle_request(store, frame))
            except OSError:
                return


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class ModelServer:
    """Socket front end for a ModelStore; ``start()`` serves on a daemon thread."""

    def __init__(self, address: tuple[str, int] = ("127.0.0.1", 0), levels: Iterable[int] = (),
                 ring_size: int = DEFAULT_RING, store: Optional[ModelStore] = None):
        self.store = store if store is not None else ModelStore(levels, ring_size)
        self._server = _TCPServer(address, _Handler)
        self._server.store = self.store
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def start(self) -> "ModelServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True, name="model-server")
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()
