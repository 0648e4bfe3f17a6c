"""Framed binary protocol (v1) for talking to a denoiser sidecar.

Frame layout:  magic "SPLT" (4 bytes) | version u16 | msg_type u16 |
payload_len u64 | payload. The magic is the literal byte string b"SPLT"
(0x53504C54 read big-endian); every other integer and all floats are
little-endian. Tensors travel as: dtype u8 (0 = f32), ndim u8, dims
u32 x ndim, then f32 data row-major.

Payload conventions on top of the framing:
  HELLO     max_frame u64 | supported-msg bitmask u32 (bit i = msg_type i;
            ERROR is always implied) | codec downscale u8 | latent channels u8
  ENCODE    one image tensor (H, W, C); response: latent tensor (C, h, w)
  DECODE    one latent tensor (C, h, w); response: image tensor (H, W, C)
  DENOISE   latent z | u8 group count | per group: name-length u8, utf8 name,
            tensor | timestep u32 | branch u8 (0 pos, 1 neg) | kind u8 (0 v, 1 eps);
            response: one prediction tensor of the requested kind
  METRIC_LPIPS  two image tensors; response: tensor of shape (1,)
  ERROR     code u32 | utf8 message

Responses set the high bit of the request msg_type (0x8001, ...).
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SPLT"
VERSION = 1
HEADER = struct.Struct("<4sHHQ")  # magic, version, msg_type, payload_len

MSG_HELLO = 0x0001
MSG_ENCODE = 0x0002
MSG_DECODE = 0x0003
MSG_DENOISE = 0x0004
MSG_METRIC_LPIPS = 0x0005
MSG_ERROR = 0x00FF
RESPONSE_BIT = 0x8000

DTYPE_F32 = 0

DEFAULT_MAX_FRAME = 1 << 30


class ProtocolError(RuntimeError):
    """Fatal framing violation (bad magic, bad length, truncated stream)."""


class FrameTooLarge(ProtocolError):
    """Frame exceeds the negotiated maximum; raised before transmission."""


class TransportError(RuntimeError):
    """Retryable transport failure (refused connection, timeout, closed pipe)."""


class RemoteError(RuntimeError):
    """Non-retryable ERROR frame from the peer."""

    def __init__(self, code: int, message: str):
        super().__init__(f"remote error {code}: {message}")
        self.code = code
        self.message = message


def supports(bitmask: int, msg_type: int) -> bool:
    return msg_type == MSG_ERROR or bool(bitmask & (1 << msg_type))


def bitmask_for(msg_types: list[int]) -> int:
    mask = 0
    for m in msg_types:
        if m != MSG_ERROR:
            mask |= 1 << m
    return mask


def pack_tensor(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim < 1 or arr.ndim > 255:
        raise ValueError(f"unsupported tensor rank {arr.ndim}")
    head = struct.pack("<BB", DTYPE_F32, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + dims + arr.tobytes()


def unpack_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    if len(buf) < offset + 2:
        raise ProtocolError("truncated tensor header")
    dtype, ndim = struct.unpack_from("<BB", buf, offset)
    if dtype != DTYPE_F32:
        raise ProtocolError(f"unsupported tensor dtype {dtype}")
    offset += 2
    if len(buf) < offset + 4 * ndim:
        raise ProtocolError("truncated tensor dims")
    dims = struct.unpack_from(f"<{ndim}I", buf, offset)
    offset += 4 * ndim
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    nbytes = 4 * count
    if len(buf) < offset + nbytes:
        raise ProtocolError("truncated tensor data")
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(dims)
    return arr.copy(), offset + nbytes


def pack_hello(max_frame: int, bitmask: int, downscale: int, latent_channels: int) -> bytes:
    return struct.pack("<QIBB", max_frame, bitmask, downscale, latent_channels)


def unpack_hello(buf: bytes) -> tuple[int, int, int, int]:
    if len(buf) != struct.calcsize("<QIBB"):
        raise ProtocolError("malformed HELLO payload")
    return struct.unpack("<QIBB", buf)


def pack_error(code: int, message: str) -> bytes:
    return struct.pack("<I", code) + message.encode("utf-8")


def unpack_error(buf: bytes) -> tuple[int, str]:
    if len(buf) < 4:
        raise ProtocolError("malformed ERROR payload")
    (code,) = struct.unpack_from("<I", buf, 0)
    return code, buf[4:].decode("utf-8", errors="replace")


def pack_denoise(
    z: np.ndarray,
    groups: list[tuple[str, np.ndarray]],
    timestep: int,
    branch: int,
    kind: int,
) -> bytes:
    if len(groups) > 255:
        raise ValueError("too many channel groups")
    parts = [pack_tensor(z), struct.pack("<B", len(groups))]
    for name, arr in groups:
        encoded = name.encode("utf-8")
        if len(encoded) > 255:
            raise ValueError(f"channel group name too long: {name!r}")
        parts.append(struct.pack("<B", len(encoded)))
        parts.append(encoded)
        parts.append(pack_tensor(arr))
    parts.append(struct.pack("<IBB", timestep, branch, kind))
    return b"".join(parts)


def unpack_denoise(buf: bytes) -> tuple[np.ndarray, list[tuple[str, np.ndarray]], int, int, int]:
    z, offset = unpack_tensor(buf, 0)
    if len(buf) < offset + 1:
        raise ProtocolError("truncated DENOISE payload")
    (count,) = struct.unpack_from("<B", buf, offset)
    offset += 1
    groups: list[tuple[str, np.ndarray]] = []
    for _ in range(count):
        if len(buf) < offset + 1:
            raise ProtocolError("truncated channel group")
        (name_len,) = struct.unpack_from("<B", buf, offset)
        offset += 1
        name = buf[offset : offset + name_len].decode("utf-8")
        offset += name_len
        arr, offset = unpack_tensor(buf, offset)
        groups.append((name, arr))
    if len(buf) != offset + struct.calcsize("<IBB"):
        raise ProtocolError("malformed DENOISE trailer")
    timestep, branch, kind = struct.unpack_from("<IBB", buf, offset)
    return z, groups, timestep, branch, kind


def write_frame(wfile, msg_type: int, payload: bytes, max_frame: int = DEFAULT_MAX_FRAME) -> None:
    frame_len = HEADER.size + len(payload)
    if frame_len > max_frame:
        raise FrameTooLarge(f"frame of {frame_len} bytes exceeds negotiated max {max_frame}")
    try:
        wfile.write(HEADER.pack(MAGIC, VERSION, msg_type, len(payload)))
        wfile.write(payload)
        wfile.flush()
    except (BrokenPipeError, ConnectionError, TimeoutError, OSError) as exc:
        raise TransportError(f"write failed: {exc}") from exc


def _read_exact(rfile, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        try:
            chunk = rfile.read(remaining)
        except (ConnectionError, TimeoutError, OSError) as exc:
            raise TransportError(f"read failed: {exc}") from exc
        if not chunk:
            raise TransportError("peer closed the stream")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(rfile, max_frame: int = DEFAULT_MAX_FRAME) -> tuple[int, bytes]:
    header = _read_exact(rfile, HEADER.size)
    magic, version, msg_type, payload_len = HEADER.unpack(header)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    if HEADER.size + payload_len > max_frame:
        raise ProtocolError(f"incoming frame of {HEADER.size + payload_len} bytes exceeds max {max_frame}")
    payload = _read_exact(rfile, payload_len)
    return msg_type, payload
