"""Versioned policy store, in-process or over a framed TCP protocol."""

from .client import RemoteStore, ServerUnavailableError
from .protocol import MAX_FRAME, Op, PolicySnapshot, Status, checksum
from .server import ModelServer, handle_request
from .store import (
    DEFAULT_RING,
    VIRTUAL_LEVEL,
    ChecksumError,
    EvictedError,
    MalformedError,
    ModelServerError,
    ModelStore,
    NotReadyError,
    RegistrationError,
)

__all__ = [
    "ChecksumError", "DEFAULT_RING", "EvictedError", "MAX_FRAME", "MalformedError", "ModelServer",
    "ModelServerError", "ModelStore", "NotReadyError", "Op", "PolicySnapshot", "RegistrationError",
    "RemoteStore", "ServerUnavailableError", "Status", "VIRTUAL_LEVEL", "checksum", "handle_request",
]
