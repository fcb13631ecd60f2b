"""Length-prefixed binary message codec for the networked mode.

Framing: [u32 LE payload length][u8 type tag][payload]. Matrices travel as
[u32 LE rows][u32 LE cols][rows*cols float32 LE, row-major]; in-memory
values are float64, so the wire is lossy beyond float32 precision.
Decoding never raises anything but WireError subclasses on malformed
input.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .weights import KINDS, WeightId

ACTIVATIONS = 1
CUT_GRAD = 2
ADAPTER_UPLOAD = 3
AGG_UPDATE = 4
PLAN = 5
BARRIER = 6

_KIND_CODE = {k: i for i, k in enumerate(KINDS)}
MAX_FRAME = 1 << 30


class WireError(ValueError):
    """Base class for malformed wire data."""


class TruncatedError(WireError):
    pass


class UnknownTagError(WireError):
    pass


class LengthMismatchError(WireError):
    pass


@dataclass(frozen=True)
class WireMessage:
    tag: int
    # Populated per tag; unused fields stay at their defaults.
    client_id: int = 0
    round: int = 0
    n_samples: int = 0
    weight_id: WeightId | None = None
    loss: float = 0.0
    split_j: int = 0
    seed: int = 0
    ranks: tuple[tuple[WeightId, int], ...] = ()
    matrices: tuple[np.ndarray, ...] = ()

    def __eq__(self, other) -> bool:
        if not isinstance(other, WireMessage):
            return NotImplemented
        if (self.tag, self.client_id, self.round, self.n_samples, self.weight_id,
                self.loss, self.split_j, self.seed, self.ranks) != (
                other.tag, other.client_id, other.round, other.n_samples, other.weight_id,
                other.loss, other.split_j, other.seed, other.ranks):
            return False
        return len(self.matrices) == len(other.matrices) and all(
            a.shape == b.shape and np.array_equal(a, b)
            for a, b in zip(self.matrices, other.matrices)
        )


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"need {n} bytes at offset {self.pos}, have {len(self.buf) - self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def matrix(self) -> np.ndarray:
        rows, cols = self.u32(), self.u32()
        if rows == 0 or cols == 0 or rows * cols > (MAX_FRAME // 4):
            raise WireError(f"bad matrix dims {rows}x{cols}")
        raw = self.take(rows * cols * 4)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(rows, cols)

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise LengthMismatchError(f"{len(self.buf) - self.pos} trailing payload bytes")


def _enc_matrix(m: np.ndarray) -> bytes:
    rows, cols = m.shape
    return struct.pack("<II", rows, cols) + np.ascontiguousarray(m, dtype="<f4").tobytes()


def _enc_weight_id(wid: WeightId) -> bytes:
    return struct.pack("<HB", wid.block, _KIND_CODE[wid.kind])


def _dec_weight_id(r: _Reader) -> WeightId:
    block = r.u16()
    code = r.u8()
    if code >= len(KINDS):
        raise WireError(f"bad weight kind code {code}")
    return WeightId(block, KINDS[code])


def encode_message(m: WireMessage) -> bytes:
    if m.tag == ACTIVATIONS:
        payload = struct.pack("<IQ", m.client_id, m.n_samples) + _enc_matrix(m.matrices[0])
    elif m.tag == CUT_GRAD:
        payload = struct.pack("<I", m.client_id) + _enc_matrix(m.matrices[0])
    elif m.tag == ADAPTER_UPLOAD:
        payload = (
            struct.pack("<I", m.client_id)
            + _enc_weight_id(m.weight_id)
            + struct.pack("<Q", m.n_samples)
            + _enc_matrix(m.matrices[0])
            + _enc_matrix(m.matrices[1])
        )
    elif m.tag == AGG_UPDATE:
        payload = _enc_weight_id(m.weight_id) + _enc_matrix(m.matrices[0])
    elif m.tag == PLAN:
        payload = struct.pack("<IHQI", m.client_id, m.split_j, m.seed, len(m.ranks))
        for wid, r in m.ranks:
            payload += _enc_weight_id(wid) + struct.pack("<H", r)
    elif m.tag == BARRIER:
        payload = struct.pack("<IId", m.round, m.client_id, m.loss)
        payload += struct.pack("<B", len(m.matrices))
        for mat in m.matrices:
            payload += _enc_matrix(mat)
    else:
        raise UnknownTagError(f"unknown message tag {m.tag}")
    return struct.pack("<IB", len(payload), m.tag) + payload


def decode_message(data: bytes) -> WireMessage:
    if len(data) < 5:
        raise TruncatedError(f"frame header needs 5 bytes, have {len(data)}")
    length, tag = struct.unpack("<IB", data[:5])
    if length > MAX_FRAME:
        raise WireError(f"frame length {length} exceeds limit")
    if len(data) - 5 != length:
        raise LengthMismatchError(f"frame declares {length} payload bytes, have {len(data) - 5}")
    r = _Reader(data[5:])
    if tag == ACTIVATIONS:
        cid, n = r.u32(), r.u64()
        msg = WireMessage(tag, client_id=cid, n_samples=n, matrices=(r.matrix(),))
    elif tag == CUT_GRAD:
        cid = r.u32()
        msg = WireMessage(tag, client_id=cid, matrices=(r.matrix(),))
    elif tag == ADAPTER_UPLOAD:
        cid = r.u32()
        wid = _dec_weight_id(r)
        n = r.u64()
        B, A = r.matrix(), r.matrix()
        if B.shape[1] != A.shape[0]:
            raise WireError(f"upload rank mismatch {B.shape} vs {A.shape}")
        msg = WireMessage(tag, client_id=cid, weight_id=wid, n_samples=n, matrices=(B, A))
    elif tag == AGG_UPDATE:
        wid = _dec_weight_id(r)
        msg = WireMessage(tag, weight_id=wid, matrices=(r.matrix(),))
    elif tag == PLAN:
        cid, split_j, seed, count = r.u32(), r.u16(), r.u64(), r.u32()
        if count > 65536:
            raise WireError(f"implausible plan entry count {count}")
        ranks = tuple((_dec_weight_id(r), r.u16()) for _ in range(count))
        msg = WireMessage(tag, client_id=cid, split_j=split_j, seed=seed, ranks=ranks)
    elif tag == BARRIER:
        rnd, cid, loss = r.u32(), r.u32(), r.f64()
        nmats = r.u8()
        msg = WireMessage(tag, round=rnd, client_id=cid, loss=loss,
                          matrices=tuple(r.matrix() for _ in range(nmats)))
    else:
        raise UnknownTagError(f"unknown message tag {tag}")
    r.done()
    return msg


def read_frame(sock) -> bytes:
    """Read one complete frame from a socket-like object with recv()."""
    header = _recv_exact(sock, 5)
    length = struct.unpack("<I", header[:4])[0]
    if length > MAX_FRAME:
        raise WireError(f"frame length {length} exceeds limit")
    return header + _recv_exact(sock, length)


def _recv_exact(sock, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            raise TruncatedError(f"connection closed with {n - got} bytes outstanding")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)
