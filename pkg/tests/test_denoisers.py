import os
import socket
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spotlight import wire
from spotlight.denoisers import IdentityCodec, SidecarClient, ToyDenoiser
from spotlight.guidance import Branch, BranchInputs
from spotlight.imagecore import LINEAR, IntrinsicStack, LatentTensor, MaskMap, PixelMap
from spotlight.scheduler import VPrediction, add_noise, eps_from, make_schedule

# --- toy denoiser -----------------------------------------------------------------


def branch_inputs(size=8, seed=0):
    rng = np.random.default_rng(seed)
    composite = PixelMap(rng.uniform(0.1, 0.9, (size, size, 3)).astype(np.float32), LINEAR)
    return BranchInputs(IntrinsicStack([]), MaskMap.zeros(size, size), composite)


class TestToyDenoiser:
    def test_eps_recovered_from_noised_target(self):
        schedule = make_schedule(1000, 50)
        codec = IdentityCodec()
        toy = ToyDenoiser(schedule, codec)
        inputs = branch_inputs(seed=4)
        target = codec.encode(inputs.guidance_composite)
        rng = np.random.default_rng(1)
        eps = LatentTensor(rng.standard_normal(target.shape).astype(np.float32))
        for t in (980, 500, 0):
            z = add_noise(schedule, target, eps, t)
            v = toy.denoise(z, inputs, t, Branch.POSITIVE)
            recovered = eps_from(schedule, z, VPrediction(v), t)
            np.testing.assert_allclose(recovered.data, eps.data, atol=1e-5)

    def test_same_inputs_same_prediction_bitwise(self):
        schedule = make_schedule(1000, 50)
        toy = ToyDenoiser(schedule, IdentityCodec())
        inputs = branch_inputs(seed=5)
        z = LatentTensor(np.random.default_rng(2).standard_normal((3, 8, 8)).astype(np.float32))
        a = toy.denoise(z, inputs, 500, Branch.POSITIVE)
        b = toy.denoise(z, inputs, 500, Branch.NEGATIVE)
        np.testing.assert_array_equal(a.data, b.data)

    def test_identity_codec_round_trip(self):
        codec = IdentityCodec()
        img = branch_inputs(seed=6).guidance_composite
        np.testing.assert_array_equal(codec.decode(codec.encode(img)).data, img.data)


# --- wire serialization -------------------------------------------------------------


class TestWireSerialization:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 4), st.integers(0, 2**32 - 1))
    def test_tensor_round_trip(self, ndim, seed):
        rng = np.random.default_rng(seed)
        shape = tuple(int(d) for d in rng.integers(1, 5, ndim))
        arr = rng.standard_normal(shape).astype(np.float32)
        out, consumed = wire.unpack_tensor(wire.pack_tensor(arr))
        assert consumed == len(wire.pack_tensor(arr))
        np.testing.assert_array_equal(out, arr)

    def test_denoise_payload_round_trip(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal((3, 4, 4)).astype(np.float32)
        groups = [
            ("albedo", rng.standard_normal((4, 4, 3)).astype(np.float32)),
            ("shadow_mask", rng.uniform(0, 1, (4, 4)).astype(np.float32)),
        ]
        payload = wire.pack_denoise(z, groups, 480, 1, 0)
        z2, groups2, t, branch, kind = wire.unpack_denoise(payload)
        np.testing.assert_array_equal(z2, z)
        assert [g[0] for g in groups2] == ["albedo", "shadow_mask"]
        for (_, a), (_, b) in zip(groups, groups2):
            np.testing.assert_array_equal(a, b)
        assert (t, branch, kind) == (480, 1, 0)

    def test_bad_magic_is_protocol_error(self):
        import io

        buf = io.BytesIO(b"XXXX" + b"\x00" * 20)
        with pytest.raises(wire.ProtocolError):
            wire.read_frame(buf)

    def test_error_payload_round_trip(self):
        code, msg = wire.unpack_error(wire.pack_error(3, "model failure"))
        assert (code, msg) == (3, "model failure")

    def test_hello_round_trip(self):
        packed = wire.pack_hello(1 << 20, wire.bitmask_for([wire.MSG_DENOISE]), 8, 4)
        assert wire.unpack_hello(packed) == (1 << 20, 1 << wire.MSG_DENOISE, 8, 4)


# --- client against a stub responder ------------------------------------------------


def stub_responder(rfile, wfile, mode="echo", max_frame=wire.DEFAULT_MAX_FRAME):
    """Minimal in-test peer: HELLO + identity codec + echo or toy DENOISE."""
    schedule = make_schedule(1000, 50)
    mask = wire.bitmask_for([wire.MSG_HELLO, wire.MSG_ENCODE, wire.MSG_DECODE, wire.MSG_DENOISE])
    while True:
        try:
            msg_type, payload = wire.read_frame(rfile, max_frame)
        except (wire.TransportError, wire.ProtocolError):
            return
        if msg_type == wire.MSG_HELLO:
            wire.write_frame(
                wfile, wire.MSG_HELLO | wire.RESPONSE_BIT,
                wire.pack_hello(max_frame, mask, 1, 3),
            )
        elif msg_type == wire.MSG_ENCODE:
            img, _ = wire.unpack_tensor(payload)
            wire.write_frame(
                wfile, wire.MSG_ENCODE | wire.RESPONSE_BIT,
                wire.pack_tensor(np.moveaxis(img, 2, 0)),
            )
        elif msg_type == wire.MSG_DECODE:
            lat, _ = wire.unpack_tensor(payload)
            wire.write_frame(
                wfile, wire.MSG_DECODE | wire.RESPONSE_BIT,
                wire.pack_tensor(np.moveaxis(lat, 0, 2)),
            )
        elif msg_type == wire.MSG_DENOISE:
            z, groups, t, branch, kind = wire.unpack_denoise(payload)
            if mode == "echo":
                out = z
            else:
                named = dict(groups)
                toy = ToyDenoiser(schedule, IdentityCodec())
                inputs = BranchInputs(
                    IntrinsicStack([]),
                    MaskMap(named["shadow_mask"]),
                    PixelMap(named["guidance_composite"], LINEAR),
                )
                out = toy.denoise(LatentTensor(z), inputs, t, Branch(branch)).data
            wire.write_frame(wfile, wire.MSG_DENOISE | wire.RESPONSE_BIT, wire.pack_tensor(out))
        else:
            wire.write_frame(wfile, wire.MSG_ERROR, wire.pack_error(1, "unsupported message"))


def pipe_client(mode="echo"):
    c2s_r, c2s_w = os.pipe()
    s2c_r, s2c_w = os.pipe()
    server_r = os.fdopen(c2s_r, "rb")
    server_w = os.fdopen(s2c_w, "wb")
    thread = threading.Thread(
        target=stub_responder, args=(server_r, server_w, mode), daemon=True
    )
    thread.start()
    client = SidecarClient.over_pipe(os.fdopen(s2c_r, "rb"), os.fdopen(c2s_w, "wb"))
    return client


def socket_client(mode="echo"):
    a, b = socket.socketpair()
    server_r, server_w = b.makefile("rb"), b.makefile("wb")
    thread = threading.Thread(
        target=stub_responder, args=(server_r, server_w, mode), daemon=True
    )
    thread.start()
    return SidecarClient(a.makefile("rb"), a.makefile("wb"), owns=(a,))


class TestSidecarClient:
    def test_echo_denoise_round_trips_bitwise(self):
        client = pipe_client("echo")
        rng = np.random.default_rng(3)
        for shape in ((3, 4, 4), (1, 8, 2), (4, 2, 6)):
            z = LatentTensor(rng.standard_normal(shape).astype(np.float32))
            out = client.denoise(z, branch_inputs(size=4), 500, Branch.POSITIVE)
            np.testing.assert_array_equal(out.data, z.data)

    def test_remote_toy_matches_in_process(self):
        client = pipe_client("toy")
        schedule = make_schedule(1000, 50)
        toy = ToyDenoiser(schedule, IdentityCodec())
        inputs = branch_inputs(seed=9)
        z = LatentTensor(np.random.default_rng(4).standard_normal((3, 8, 8)).astype(np.float32))
        for t in (980, 440, 0):
            remote = client.denoise(z, inputs, t, Branch.POSITIVE)
            local = toy.denoise(z, inputs, t, Branch.POSITIVE)
            np.testing.assert_allclose(remote.data, local.data, atol=1e-6)

    def test_transport_agnostic_pipe_vs_socket(self):
        z = LatentTensor(np.random.default_rng(5).standard_normal((3, 6, 6)).astype(np.float32))
        inputs = branch_inputs(seed=10, size=6)
        via_pipe = pipe_client("toy").denoise(z, inputs, 500, Branch.POSITIVE)
        via_socket = socket_client("toy").denoise(z, inputs, 500, Branch.POSITIVE)
        np.testing.assert_array_equal(via_pipe.data, via_socket.data)

    def test_encode_decode_round_trip(self):
        client = pipe_client("echo")
        img = branch_inputs(seed=11).guidance_composite
        lat = client.encode(img)
        assert lat.shape == (3, 8, 8)
        out = client.decode(lat)
        np.testing.assert_array_equal(out.data, img.data)

    def test_oversized_frame_rejected_before_send(self):
        client = pipe_client("echo")
        client._max_frame = 64
        big = LatentTensor(np.zeros((3, 32, 32), dtype=np.float32))
        with pytest.raises(wire.FrameTooLarge):
            client.denoise(big, branch_inputs(size=32), 500, Branch.POSITIVE)

    def test_unsupported_message_raises_remote_error(self):
        client = pipe_client("echo")
        img = branch_inputs(seed=12).guidance_composite
        with pytest.raises(wire.RemoteError):
            client.metric_lpips(img, img)

    def test_connection_refused_is_transport_error(self):
        with pytest.raises(wire.TransportError):
            SidecarClient.connect("127.0.0.1:1", timeout=0.5)
