import struct

import numpy as np
import pytest

from spotlight_sidecar import protocol
from spotlight_sidecar.models import ToyModel


def denoise_payload(z, groups=(), t=500, branch=0, kind=0):
    parts = [protocol.encode_tensor(z), bytes([len(groups)])]
    for name, arr in groups:
        encoded = name.encode()
        parts += [bytes([len(encoded)]), encoded, protocol.encode_tensor(arr)]
    parts.append(struct.pack("<IBB", t, branch, kind))
    return b"".join(parts)


class TestEchoServer:
    def test_denoise_loopback(self, run_server, raw_client):
        client = raw_client(run_server(mode="echo"))
        client.hello()
        z = np.random.default_rng(0).standard_normal((3, 6, 6)).astype(np.float32)
        resp_type, body = client.request(protocol.MSG_DENOISE, denoise_payload(z))
        assert resp_type == protocol.MSG_DENOISE | protocol.RESPONSE_BIT
        out, _ = protocol.decode_tensor(body)
        np.testing.assert_array_equal(out, z)

    def test_capability_mask_is_truthful(self, run_server, raw_client):
        client = raw_client(run_server(mode="echo"))
        hello = client.hello()
        probe = np.zeros((2, 2), dtype=np.float32)
        payloads = {
            protocol.MSG_ENCODE: protocol.encode_tensor(probe),
            protocol.MSG_DECODE: protocol.encode_tensor(probe),
            protocol.MSG_DENOISE: denoise_payload(probe),
            protocol.MSG_METRIC_LPIPS: protocol.encode_tensor(probe) * 2,
        }
        for msg_type, payload in payloads.items():
            resp_type, body = client.request(msg_type, payload)
            advertised = bool(hello.msg_mask & (1 << msg_type))
            if advertised:
                assert resp_type == msg_type | protocol.RESPONSE_BIT
            else:
                assert resp_type == protocol.MSG_ERROR
                (code,) = struct.unpack_from("<I", body)
                assert code == protocol.ERR_UNSUPPORTED

    def test_unsupported_lpips_is_error_1(self, run_server, raw_client):
        client = raw_client(run_server(mode="echo"))
        client.hello()
        payload = protocol.encode_tensor(np.zeros((2, 2), np.float32)) * 2
        resp_type, body = client.request(protocol.MSG_METRIC_LPIPS, payload)
        assert resp_type == protocol.MSG_ERROR
        code = struct.unpack_from("<I", body)[0]
        assert code == 1


class TestToyServer:
    def test_encode_decode_transpose(self, run_server, raw_client):
        client = raw_client(run_server(mode="toy"))
        hello = client.hello()
        assert (hello.downscale, hello.latent_channels) == (1, 3)
        img = np.random.default_rng(1).uniform(0, 1, (5, 7, 3)).astype(np.float32)
        _, body = client.request(protocol.MSG_ENCODE, protocol.encode_tensor(img))
        lat, _ = protocol.decode_tensor(body)
        assert lat.shape == (3, 5, 7)
        _, body = client.request(protocol.MSG_DECODE, protocol.encode_tensor(lat))
        back, _ = protocol.decode_tensor(body)
        np.testing.assert_array_equal(back, img)

    def test_denoise_serves_v_and_eps(self, run_server, raw_client):
        client = raw_client(run_server(mode="toy"))
        client.hello()
        rng = np.random.default_rng(2)
        composite = rng.uniform(0.1, 0.9, (6, 6, 3)).astype(np.float32)
        z = rng.standard_normal((3, 6, 6)).astype(np.float32)
        groups = [("guidance_composite", composite)]
        _, v_body = client.request(protocol.MSG_DENOISE, denoise_payload(z, groups, t=600, kind=0))
        _, e_body = client.request(protocol.MSG_DENOISE, denoise_payload(z, groups, t=600, kind=1))
        v, _ = protocol.decode_tensor(v_body)
        eps, _ = protocol.decode_tensor(e_body)
        # the pair must satisfy the noising identity around the toy target
        model = ToyModel()
        abar = float(np.cumprod(1 - np.linspace(0.00085**0.5, 0.012**0.5, 1000) ** 2)[600])
        a, s = np.float32(np.sqrt(abar)), np.float32(np.sqrt(1 - abar))
        np.testing.assert_allclose(v, a * eps - s * model.encode(composite), atol=1e-5)

    def test_missing_composite_is_error_2(self, run_server, raw_client):
        client = raw_client(run_server(mode="toy"))
        client.hello()
        z = np.zeros((3, 4, 4), dtype=np.float32)
        resp_type, body = client.request(protocol.MSG_DENOISE, denoise_payload(z))
        assert resp_type == protocol.MSG_ERROR
        assert struct.unpack_from("<I", body)[0] == protocol.ERR_BAD_TENSOR

    def test_malformed_payload_is_error_2_and_stream_survives(self, run_server, raw_client):
        client = raw_client(run_server(mode="toy"))
        client.hello()
        resp_type, body = client.request(protocol.MSG_DENOISE, b"\x00\x03garbage")
        assert resp_type == protocol.MSG_ERROR
        assert struct.unpack_from("<I", body)[0] == protocol.ERR_BAD_TENSOR
        # the connection is still perfectly usable
        img = np.ones((2, 2, 3), dtype=np.float32)
        resp_type, _ = client.request(protocol.MSG_ENCODE, protocol.encode_tensor(img))
        assert resp_type == protocol.MSG_ENCODE | protocol.RESPONSE_BIT


class TestFrameLimits:
    def test_oversized_frame_is_error_4(self, run_server, raw_client):
        client = raw_client(run_server(mode="echo", max_frame=1024))
        big = np.zeros((64, 64), dtype=np.float32)  # 16 KiB payload
        resp_type, body = client.request(protocol.MSG_DENOISE, denoise_payload(big))
        assert resp_type == protocol.MSG_ERROR
        assert struct.unpack_from("<I", body)[0] == protocol.ERR_FRAME_TOO_LARGE
        # still in sync afterwards
        small = np.zeros((2, 2), dtype=np.float32)
        resp_type, _ = client.request(protocol.MSG_DENOISE, denoise_payload(small))
        assert resp_type == protocol.MSG_DENOISE | protocol.RESPONSE_BIT


class TestLpips:
    def test_injected_metric_is_served_and_advertised(self, run_server, raw_client):
        def fake_metric(a, b):
            return float(np.mean((a - b) ** 2))

        client = raw_client(run_server(mode="echo", lpips=fake_metric))
        hello = client.hello()
        assert hello.msg_mask & (1 << protocol.MSG_METRIC_LPIPS)
        a = np.full((4, 4, 3), 0.5, dtype=np.float32)
        b = np.full((4, 4, 3), 0.25, dtype=np.float32)
        payload = protocol.encode_tensor(a) + protocol.encode_tensor(b)
        resp_type, body = client.request(protocol.MSG_METRIC_LPIPS, payload)
        assert resp_type == protocol.MSG_METRIC_LPIPS | protocol.RESPONSE_BIT
        value, _ = protocol.decode_tensor(body)
        assert value[0] == pytest.approx(0.0625)

    def test_engine_client_reads_the_metric(self, run_server):
        from spotlight.denoisers import SidecarClient
        from spotlight.imagecore import PixelMap

        addr = run_server(mode="echo", lpips=lambda a, b: float(np.mean((a - b) ** 2)))
        with SidecarClient.connect(addr) as client:
            a = PixelMap(np.full((4, 4, 3), 0.5, dtype=np.float32))
            b = PixelMap(np.full((4, 4, 3), 0.25, dtype=np.float32))
            assert client.metric_lpips(a, b) == pytest.approx(0.0625)


class TestStdioServing:
    def test_serves_over_pipes(self):
        import io

        from spotlight_sidecar.server import ConnectionHandler

        handler = ConnectionHandler(ToyModel(), 1 << 30)
        inbound = io.BytesIO()
        protocol.write_frame(inbound, protocol.MSG_HELLO, protocol.Hello(1 << 30, 0, 0, 0).pack())
        img = np.ones((2, 3, 3), dtype=np.float32)
        protocol.write_frame(inbound, protocol.MSG_ENCODE, protocol.encode_tensor(img))
        inbound.seek(0)
        outbound = io.BytesIO()
        handler.serve(inbound, outbound)
        outbound.seek(0)
        assert protocol.read_frame_header(outbound)[0] == protocol.MSG_HELLO | protocol.RESPONSE_BIT

    def test_console_script_speaks_stdio(self):
        import subprocess
        import sys

        frames = bytearray()

        class Buf:
            def write(self, b):
                frames.extend(b)

            def flush(self):
                pass

        buf = Buf()
        protocol.write_frame(buf, protocol.MSG_HELLO, protocol.Hello(1 << 30, 0, 0, 0).pack())
        z = np.ones((3, 2, 2), dtype=np.float32)
        protocol.write_frame(buf, protocol.MSG_DENOISE, denoise_payload(z))
        proc = subprocess.run(
            [sys.executable, "-m", "spotlight_sidecar.cli", "--listen", "stdio", "--mode", "echo"],
            input=bytes(frames), capture_output=True, timeout=30,
        )
        assert proc.returncode == 0, proc.stderr.decode()
        import io

        out = io.BytesIO(proc.stdout)
        assert protocol.read_frame_header(out)[0] == protocol.MSG_HELLO | protocol.RESPONSE_BIT