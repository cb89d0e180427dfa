"""Binary wire format for client/server messages.

Layout (all integers little-endian)::

    "FDMV" | version:u8 | tag:u8 | header | payload

Upload (tag 1) header: view:u32, n:u32, d:u32, k:u32; payload: ids (n x i64),
Z (n x d f64), Q (n x k f64).

Broadcast (tag 2) header: n:u32, k:u32, m:u32, view_dims (m x u32); payload:
ids (n x i64), C (k x sum(view_dims) f64), P (n x k f64).
"""

from __future__ import annotations

import struct
from typing import Union

import numpy as np

from .client import ClientUpload
from .errors import ContractError, DeserializationError
from .server import Broadcast

MAGIC = b"FDMV"
VERSION = 1
TAG_UPLOAD = 1
TAG_BROADCAST = 2

Message = Union[ClientUpload, Broadcast]


def _f64(a) -> bytes:
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ContractError("message payload must be finite")
    return a.astype("<f8").tobytes()


def serialize(msg: Message) -> bytes:
    if isinstance(msg, ClientUpload):
        n, d = msg.Z.shape
        k = msg.Q.shape[1]
        head = struct.pack("<4sBBIIII", MAGIC, VERSION, TAG_UPLOAD, msg.view, n, d, k)
        return b"".join([head, np.asarray(msg.ids).astype("<i8").tobytes(), _f64(msg.Z), _f64(msg.Q)])
    if isinstance(msg, Broadcast):
        n, k = msg.P.shape
        dims = tuple(int(x) for x in msg.view_dims)
        if msg.C.shape != (k, sum(dims)):
            raise ContractError("prototype shape does not match view_dims")
        head = struct.pack(f"<4sBBIII{len(dims)}I", MAGIC, VERSION, TAG_BROADCAST, n, k, len(dims), *dims)
        return b"".join([head, np.asarray(msg.ids).astype("<i8").tobytes(), _f64(msg.C), _f64(msg.P)])
    raise ContractError(f"cannot serialize {type(msg).__name__}")


class _Reader:
    def __init__(self, buf: bytes):
        self.view = memoryview(buf)
        self.off = 0

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        if self.off + size > len(self.view):
            raise DeserializationError(f"truncated {what}", self.off)
        out = struct.unpack_from(fmt, self.view, self.off)
        self.off += size
        return out

    def array(self, dtype: str, shape, what: str) -> np.ndarray:
        count = int(np.prod(shape))
        size = count * 8
        if self.off + size > len(self.view):
            raise DeserializationError(f"truncated {what}", self.off)
        a = np.frombuffer(self.view, dtype, count, self.off).reshape(shape)
        self.off += size
        return a.astype(np.int64 if dtype == "<i8" else np.float64)


def deserialize(buf: bytes) -> Message:
    r = _Reader(buf)
    if len(buf) < 4 or bytes(r.view[:4]) != MAGIC:
        raise DeserializationError("bad magic", 0)
    r.off = 4
    version, tag = r.unpack("<BB", "version/tag")
    if version != VERSION:
        raise DeserializationError(f"unsupported version {version}", 4)
    if tag == TAG_UPLOAD:
        view, n, d, k = r.unpack("<IIII", "upload header")
        ids = r.array("<i8", (n,), "ids")
        Z = r.array("<f8", (n, d), "Z")
        Q = r.array("<f8", (n, k), "Q")
        msg: Message = ClientUpload(Z=Z, Q=Q, ids=ids, view=view)
    elif tag == TAG_BROADCAST:
        n, k, m = r.unpack("<III", "broadcast header")
        dims = r.unpack(f"<{m}I", "view dims")
        ids = r.array("<i8", (n,), "ids")
        C = r.array("<f8", (k, sum(dims)), "C")
        P = r.array("<f8", (n, k), "P")
        msg = Broadcast(C=C, P=P, ids=ids, view_dims=tuple(dims))
    else:
        raise DeserializationError(f"unknown message tag {tag}", 5)
    if r.off != len(r.view):
        raise DeserializationError("trailing bytes", r.off)
    return msg
