"""The protocol server: one request in flight per connection, strictly serial
per-connection processing, ERROR frames for everything recoverable.

Error codes: 1 unsupported message, 2 bad tensor/payload, 3 model failure,
4 frame too large. Framing corruption (bad magic/version) closes the
connection; nothing else does.
"""

from __future__ import annotations

import signal
import socketserver
import threading
from dataclasses import dataclass, field

import numpy as np

from . import protocol
from .backbones import BackboneAdapter
from .models import EchoModel, ToyModel

DEFAULT_MAX_FRAME = 1 << 30
_DISCARD_CHUNK = 1 << 20


@dataclass
class ServerConfig:
    listen: str = "127.0.0.1:0"
    mode: str = "echo"  # echo | toy | backbone
    backbone: str | None = None
    device: str | None = None
    max_frame: int = DEFAULT_MAX_FRAME
    model: object = None  # preconstructed model (tests, embedding)
    lpips: object = None  # optional callable(a, b) -> float

    def build_model(self):
        if self.model is not None:
            return self.model
        if self.mode == "echo":
            return EchoModel()
        if self.mode == "toy":
            return ToyModel()
        if self.mode == "backbone":
            if not self.backbone:
                raise ValueError("backbone mode needs --backbone")
            return BackboneAdapter(self.backbone)
        raise ValueError(f"unknown mode {self.mode!r}")


class ConnectionHandler:
    """Serves one connection's request loop over file-like r/w streams."""

    def __init__(self, model, max_frame: int, lpips=None):
        self.model = model
        self.max_frame = max_frame
        self.lpips = lpips
        types = list(model.msg_types)
        if lpips is not None:
            types.append(protocol.MSG_METRIC_LPIPS)
        self.msg_types = tuple(types)
        self.mask = protocol.mask_of(self.msg_types)

    def hello(self) -> protocol.Hello:
        return protocol.Hello(
            max_frame=self.max_frame,
            msg_mask=self.mask,
            downscale=getattr(self.model, "downscale", 1),
            latent_channels=getattr(self.model, "latent_channels", 3),
        )

    def serve(self, rfile, wfile) -> None:
        while True:
            try:
                header = protocol.read_frame_header(rfile)
            except protocol.FramingError:
                return
            if header is None:
                return
            msg_type, payload_len = header
            if protocol.HEADER_SIZE + payload_len > self.max_frame:
                if not self._discard(rfile, payload_len):
                    return
                self._error(wfile, protocol.ERR_FRAME_TOO_LARGE,
                            f"frame exceeds max {self.max_frame} bytes")
                continue
            payload = protocol.read_exact(rfile, payload_len)
            if payload is None and payload_len:
                return
            try:
                self._dispatch(wfile, msg_type, payload or b"")
            except BrokenPipeError:
                return

    def _discard(self, rfile, n: int) -> bool:
        while n:
            chunk = rfile.read(min(n, _DISCARD_CHUNK))
            if not chunk:
                return False
            n -= len(chunk)
        return True

    def _error(self, wfile, code: int, message: str) -> None:
        protocol.write_frame(wfile, protocol.MSG_ERROR, protocol.encode_error(code, message))

    def _dispatch(self, wfile, msg_type: int, payload: bytes) -> None:
        if msg_type not in self.msg_types:
            self._error(wfile, protocol.ERR_UNSUPPORTED, f"unsupported msg_type 0x{msg_type:04x}")
            return
        try:
            if msg_type == protocol.MSG_HELLO:
                protocol.Hello.unpack(payload)  # validate, limits are advisory
                response = self.hello().pack()
            elif msg_type == protocol.MSG_ENCODE:
                img, _ = protocol.decode_tensor(payload)
                response = protocol.encode_tensor(self._run(self.model.encode, img))
            elif msg_type == protocol.MSG_DECODE:
                lat, _ = protocol.decode_tensor(payload)
                response = protocol.encode_tensor(self._run(self.model.decode, lat))
            elif msg_type == protocol.MSG_DENOISE:
                request = protocol.decode_denoise(payload)
                response = protocol.encode_tensor(self._run(self.model.denoise, request))
            elif msg_type == protocol.MSG_METRIC_LPIPS:
                a, offset = protocol.decode_tensor(payload)
                b, _ = protocol.decode_tensor(payload, offset)
                value = self._run(self.lpips, a, b)
                response = protocol.encode_tensor(np.array([value], dtype=np.float32))
            else:  # pragma: no cover - mask check precedes this
                self._error(wfile, protocol.ERR_UNSUPPORTED, "unhandled msg_type")
                return
        except protocol.PayloadError as exc:
            self._error(wfile, protocol.ERR_BAD_TENSOR, str(exc))
            return
        except _ModelFailure as exc:
            self._error(wfile, protocol.ERR_MODEL_FAILURE, str(exc))
            return
        protocol.write_frame(wfile, msg_type | protocol.RESPONSE_BIT, response)

    def _run(self, fn, *args):
        try:
            return fn(*args)
        except protocol.PayloadError:
            raise
        except Exception as exc:
            raise _ModelFailure(str(exc)) from exc


class _ModelFailure(RuntimeError):
    pass


class _TCPHandler(socketserver.StreamRequestHandler):
    # request/response pattern: buffer whole frames, no Nagle stalls
    disable_nagle_algorithm = True
    wbufsize = -1

    def handle(self):
        self.server.connection_handler.serve(self.rfile, self.wfile)


class SidecarServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, config: ServerConfig):
        host, _, port = config.listen.rpartition(":")
        super().__init__((host or "127.0.0.1", int(port or 0)), _TCPHandler)
        self.connection_handler = ConnectionHandler(
            config.build_model(), config.max_frame, config.lpips
        )

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"


def serve(config: ServerConfig) -> None:
    """Run until SIGINT/SIGTERM; the long-running entry point."""
    if config.listen == "stdio":
        import sys

        handler = ConnectionHandler(config.build_model(), config.max_frame, config.lpips)
        handler.serve(sys.stdin.buffer, sys.stdout.buffer)
        return

    server = SidecarServer(config)
    stop = threading.Event()

    def shutdown(signum, frame):
        stop.set()
        threading.Thread(target=server.shutdown, daemon=True).start()

    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, shutdown)
    print(f"spotlight-sidecar serving {config.mode} on {server.address}", flush=True)
    try:
        server.serve_forever()
    finally:
        server.server_close()
