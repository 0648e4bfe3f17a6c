import socket
import threading

import pytest

from spotlight_sidecar import protocol
from spotlight_sidecar.server import ServerConfig, SidecarServer


class RawClient:
    """Minimal frame-level test client (deliberately dumb: no capability
    checks, no validation) for poking the server directly."""

    def __init__(self, addr: str, timeout: float = 10.0):
        host, _, port = addr.rpartition(":")
        self.sock = socket.create_connection((host, int(port)), timeout=timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.rfile = self.sock.makefile("rb")
        self.wfile = self.sock.makefile("wb")

    def request(self, msg_type: int, payload: bytes) -> tuple[int, bytes]:
        protocol.write_frame(self.wfile, msg_type, payload)
        header = protocol.read_frame_header(self.rfile)
        assert header is not None, "server closed the connection"
        resp_type, payload_len = header
        body = protocol.read_exact(self.rfile, payload_len) if payload_len else b""
        return resp_type, body or b""

    def hello(self) -> protocol.Hello:
        resp_type, body = self.request(
            protocol.MSG_HELLO, protocol.Hello(1 << 30, 0xFFFF_FFFF, 0, 0).pack()
        )
        assert resp_type == protocol.MSG_HELLO | protocol.RESPONSE_BIT
        return protocol.Hello.unpack(body)

    def close(self):
        for obj in (self.rfile, self.wfile, self.sock):
            try:
                obj.close()
            except OSError:
                pass


@pytest.fixture
def run_server():
    servers = []

    def start(**config_kwargs) -> str:
        server = SidecarServer(ServerConfig(**config_kwargs))
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        servers.append((server, thread))
        return server.address

    yield start
    for server, thread in servers:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)


@pytest.fixture
def raw_client(run_server):
    clients = []

    def connect(addr: str) -> RawClient:
        client = RawClient(addr)
        clients.append(client)
        return client

    yield connect
    for c in clients:
        c.close()
