"""Framed binary wire format, server-side implementation.

Frames are: 4 magic bytes "SPLT" | version u16 | msg_type u16 | payload
length u64 | payload, with every integer and float little-endian (the magic
is a byte string, not an integer field). Tensors are dtype u8 (0 = f32),
ndim u8, dims u32 each, then row-major f32 data.

This module is intentionally self-contained: it shares no code with any
client implementation, so conformance tests between the two are meaningful.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SPLT"
VERSION = 1

MSG_HELLO = 0x0001
MSG_ENCODE = 0x0002
MSG_DECODE = 0x0003
MSG_DENOISE = 0x0004
MSG_METRIC_LPIPS = 0x0005
MSG_ERROR = 0x00FF
RESPONSE_BIT = 0x8000

ERR_UNSUPPORTED = 1
ERR_BAD_TENSOR = 2
ERR_MODEL_FAILURE = 3
ERR_FRAME_TOO_LARGE = 4

_HEADER = struct.Struct("<4sHHQ")
HEADER_SIZE = _HEADER.size

KIND_V = 0
KIND_EPS = 1

BRANCH_POSITIVE = 0
BRANCH_NEGATIVE = 1


class FramingError(RuntimeError):
    """Unrecoverable stream corruption; the connection must close."""


class PayloadError(ValueError):
    """Malformed payload within a well-framed message (ERROR code 2)."""


@dataclass(frozen=True)
class Hello:
    max_frame: int
    msg_mask: int
    downscale: int
    latent_channels: int

    def pack(self) -> bytes:
        return struct.pack("<QIBB", self.max_frame, self.msg_mask, self.downscale, self.latent_channels)

    @classmethod
    def unpack(cls, payload: bytes) -> "Hello":
        if len(payload) != struct.calcsize("<QIBB"):
            raise PayloadError("HELLO payload has wrong size")
        return cls(*struct.unpack("<QIBB", payload))


def mask_of(msg_types) -> int:
    mask = 0
    for m in msg_types:
        if m != MSG_ERROR:
            mask |= 1 << m
    return mask


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    return (
        struct.pack("<BB", 0, arr.ndim)
        + struct.pack(f"<{arr.ndim}I", *arr.shape)
        + arr.tobytes()
    )


def decode_tensor(payload: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    end = len(payload)
    if end - offset < 2:
        raise PayloadError("tensor header truncated")
    dtype, ndim = payload[offset], payload[offset + 1]
    if dtype != 0:
        raise PayloadError(f"unsupported tensor dtype {dtype}")
    offset += 2
    if end - offset < 4 * ndim:
        raise PayloadError("tensor dims truncated")
    dims = struct.unpack_from(f"<{ndim}I", payload, offset)
    offset += 4 * ndim
    count = 1
    for d in dims:
        count *= d
    if end - offset < 4 * count:
        raise PayloadError("tensor data truncated")
    arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(dims).copy()
    return arr, offset + 4 * count


@dataclass(frozen=True)
class DenoiseRequest:
    z: np.ndarray
    groups: dict[str, np.ndarray]
    timestep: int
    branch: int
    kind: int


def decode_denoise(payload: bytes) -> DenoiseRequest:
    z, offset = decode_tensor(payload)
    if len(payload) - offset < 1:
        raise PayloadError("missing channel-group count")
    count = payload[offset]
    offset += 1
    groups: dict[str, np.ndarray] = {}
    for _ in range(count):
        if len(payload) - offset < 1:
            raise PayloadError("channel group truncated")
        name_len = payload[offset]
        offset += 1
        try:
            name = payload[offset : offset + name_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise PayloadError(f"channel group name not utf-8: {exc}") from exc
        offset += name_len
        arr, offset = decode_tensor(payload, offset)
        groups[name] = arr
    if len(payload) - offset != struct.calcsize("<IBB"):
        raise PayloadError("DENOISE trailer has wrong size")
    timestep, branch, kind = struct.unpack_from("<IBB", payload, offset)
    if kind not in (KIND_V, KIND_EPS):
        raise PayloadError(f"unknown prediction kind {kind}")
    return DenoiseRequest(z, groups, timestep, branch, kind)


def encode_error(code: int, message: str) -> bytes:
    return struct.pack("<I", code) + message.encode("utf-8")


def write_frame(wfile, msg_type: int, payload: bytes) -> None:
    wfile.write(_HEADER.pack(MAGIC, VERSION, msg_type, len(payload)))
    wfile.write(payload)
    wfile.flush()


def read_exact(rfile, n: int) -> bytes | None:
    """Read exactly n bytes; None signals a cleanly closed stream at a frame
    boundary, anything short of that mid-read is a framing error."""
    chunks = []
    remaining = n
    while remaining:
        chunk = rfile.read(remaining)
        if not chunk:
            if remaining == n and not chunks:
                return None
            raise FramingError("stream closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame_header(rfile) -> tuple[int, int] | None:
    """Returns (msg_type, payload_len) or None on clean EOF."""
    raw = read_exact(rfile, HEADER_SIZE)
    if raw is None:
        return None
    magic, version, msg_type, payload_len = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise FramingError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FramingError(f"unsupported version {version}")
    return msg_type, payload_len
