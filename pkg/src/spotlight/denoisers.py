"""Denoiser implementations: the analytic toy model for exact verification,
the identity codec, and a wire-protocol client for remote backbones.
"""

from __future__ import annotations

import socket
from typing import Callable

import numpy as np

from . import wire
from .guidance import Branch, BranchInputs, CodecInterface, DenoiserInterface
from .imagecore import LatentTensor, PixelMap
from .scheduler import NoiseSchedule

TargetRule = Callable[[BranchInputs, Branch], LatentTensor]


class IdentityCodec(CodecInterface):
    """Latent domain = image domain; the toy world's stand-in for a VAE."""

    downscale_factor = 1

    def __init__(self, channels: int = 3):
        self.latent_channels = channels

    def encode(self, img: PixelMap) -> LatentTensor:
        if img.channels != self.latent_channels:
            raise ValueError(
                f"identity codec expects {self.latent_channels} channels, got {img.channels}"
            )
        return LatentTensor(np.moveaxis(img.data, 2, 0))

    def decode(self, lat: LatentTensor) -> PixelMap:
        return PixelMap(np.clip(np.moveaxis(lat.data, 0, 2), 0.0, None))


class ToyDenoiser(DenoiserInterface):
    """Analytic v-predicting denoiser whose DDIM chain converges exactly to a
    per-branch target image.

    The default target is the branch's guidance composite, i.e. the albedo
    composite darkened inside that branch's shadow mask. Given the target T,
    the prediction is v = sqrt(abar)*eps_hat - sqrt(1-abar)*T with
    eps_hat = (z - sqrt(abar)*T) / sqrt(1-abar); requires the identity codec
    so latent dims equal image dims.
    """

    prediction_kind = "v"
    parallel_branches = True  # pure function, reentrant

    def __init__(
        self,
        schedule: NoiseSchedule,
        codec: IdentityCodec | None = None,
        target_rule: TargetRule | None = None,
    ):
        self.schedule = schedule
        self.codec = codec or IdentityCodec()
        self.target_rule = target_rule or (
            lambda inputs, branch: self.codec.encode(inputs.guidance_composite)
        )

    def denoise(self, z: LatentTensor, inputs: BranchInputs, t: int, branch: Branch) -> LatentTensor:
        target = self.target_rule(inputs, branch)
        if target.shape != z.shape:
            raise ValueError(f"target {target.shape} does not match latent {z.shape}")
        abar = self.schedule.alpha_bar(t)
        a = np.float32(np.sqrt(abar))
        s = np.float32(np.sqrt(1.0 - abar))
        eps_hat = (z.data - a * target.data) / s
        return LatentTensor(a * eps_hat - s * target.data)


def _parse_addr(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"sidecar address must be host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


class SidecarClient(DenoiserInterface, CodecInterface):
    """Presents a remote sidecar as a denoiser + codec over the framed protocol.

    One request in flight per connection; responses are matched by framing
    order. Construct via ``connect`` (TCP) or ``over_pipe`` (any file-like
    pair, e.g. a spawned process's stdio).
    """

    prediction_kind = "v"
    parallel_branches = False  # single stream; use DualConnectionDenoiser for overlap

    def __init__(self, rfile, wfile, *, max_frame: int = wire.DEFAULT_MAX_FRAME, owns=()):
        self._rfile = rfile
        self._wfile = wfile
        self._owns = tuple(owns)
        self._max_frame = max_frame
        client_mask = wire.bitmask_for(
            [wire.MSG_HELLO, wire.MSG_ENCODE, wire.MSG_DECODE, wire.MSG_DENOISE, wire.MSG_METRIC_LPIPS]
        )
        hello = wire.pack_hello(max_frame, client_mask, 0, 0)
        resp = self._request(wire.MSG_HELLO, hello)
        remote_max, self.remote_mask, downscale, channels = wire.unpack_hello(resp)
        self._max_frame = min(max_frame, remote_max)
        self.downscale_factor = downscale
        self.latent_channels = channels

    @classmethod
    def connect(cls, addr: str, timeout: float = 30.0) -> "SidecarClient":
        host, port = _parse_addr(addr)
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise wire.TransportError(f"cannot connect to sidecar at {addr}: {exc}") from exc
        sock.settimeout(timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        rfile = sock.makefile("rb")
        wfile = sock.makefile("wb")
        return cls(rfile, wfile, owns=(rfile, wfile, sock))

    @classmethod
    def over_pipe(cls, rfile, wfile) -> "SidecarClient":
        return cls(rfile, wfile)

    def _request(self, msg_type: int, payload: bytes) -> bytes:
        wire.write_frame(self._wfile, msg_type, payload, self._max_frame)
        resp_type, resp = wire.read_frame(self._rfile, self._max_frame)
        if resp_type == wire.MSG_ERROR:
            raise wire.RemoteError(*wire.unpack_error(resp))
        if resp_type != (msg_type | wire.RESPONSE_BIT):
            raise wire.ProtocolError(
                f"response type 0x{resp_type:04x} does not match request 0x{msg_type:04x}"
            )
        return resp

    def _check_supported(self, msg_type: int):
        if not wire.supports(self.remote_mask, msg_type):
            raise wire.RemoteError(1, f"sidecar does not support msg_type 0x{msg_type:04x}")

    def encode(self, img: PixelMap) -> LatentTensor:
        self._check_supported(wire.MSG_ENCODE)
        resp = self._request(wire.MSG_ENCODE, wire.pack_tensor(img.data))
        lat, _ = wire.unpack_tensor(resp)
        return LatentTensor(lat)

    def decode(self, lat: LatentTensor) -> PixelMap:
        self._check_supported(wire.MSG_DECODE)
        resp = self._request(wire.MSG_DECODE, wire.pack_tensor(lat.data))
        img, _ = wire.unpack_tensor(resp)
        return PixelMap(np.clip(img, 0.0, None))

    def denoise(self, z: LatentTensor, inputs: BranchInputs, t: int, branch: Branch) -> LatentTensor:
        self._check_supported(wire.MSG_DENOISE)
        groups: list[tuple[str, np.ndarray]] = [
            (name, pm.data) for name, pm in inputs.intrinsics
        ]
        groups.append(("shadow_mask", inputs.shadow_mask.data))
        groups.append(("guidance_composite", inputs.guidance_composite.data))
        if inputs.object_mask is not None:
            groups.append(("object_mask", inputs.object_mask.data))
        payload = wire.pack_denoise(z.data, groups, t, int(branch), 0)
        resp = self._request(wire.MSG_DENOISE, payload)
        v, _ = wire.unpack_tensor(resp)
        return LatentTensor(v)

    def metric_lpips(self, a: PixelMap, b: PixelMap) -> float:
        self._check_supported(wire.MSG_METRIC_LPIPS)
        payload = wire.pack_tensor(a.data) + wire.pack_tensor(b.data)
        resp = self._request(wire.MSG_METRIC_LPIPS, payload)
        value, _ = wire.unpack_tensor(resp)
        return float(value.reshape(-1)[0])

    def close(self):
        for obj in self._owns:
            try:
                obj.close()
            except OSError:
                pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class DualConnectionDenoiser(DenoiserInterface):
    """Two single-stream sidecar connections, one per branch, so the sampler
    may evaluate both branches concurrently."""

    prediction_kind = "v"
    parallel_branches = True

    def __init__(self, pos: SidecarClient, neg: SidecarClient):
        self.clients = {Branch.POSITIVE: pos, Branch.NEGATIVE: neg}

    @classmethod
    def connect(cls, addr: str, timeout: float = 30.0) -> "DualConnectionDenoiser":
        return cls(SidecarClient.connect(addr, timeout), SidecarClient.connect(addr, timeout))

    def denoise(self, z: LatentTensor, inputs: BranchInputs, t: int, branch: Branch) -> LatentTensor:
        return self.clients[branch].denoise(z, inputs, t, branch)

    def close(self):
        for client in self.clients.values():
            client.close()
