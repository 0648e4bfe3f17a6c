"""Served models: pure-loopback echo and the analytic toy denoiser.

The toy model answers DENOISE with the exact prediction whose deterministic
sampling chain converges to the request's guidance composite, computed from
its own scaled-linear schedule. It exists so any client implementation can be
validated end-to-end against a known-good remote peer.
"""

from __future__ import annotations

import numpy as np

from . import protocol
from .protocol import PayloadError

BETA_START = 0.00085
BETA_END = 0.012
TRAIN_STEPS = 1000


def alphas_bar(train_steps: int = TRAIN_STEPS) -> np.ndarray:
    betas = np.linspace(BETA_START**0.5, BETA_END**0.5, train_steps, dtype=np.float64) ** 2
    return np.cumprod(1.0 - betas)


class EchoModel:
    """Loopback for conformance tests: every tensor comes back unchanged."""

    name = "echo"
    downscale = 1
    latent_channels = 3
    msg_types = (
        protocol.MSG_HELLO, protocol.MSG_ENCODE, protocol.MSG_DECODE, protocol.MSG_DENOISE,
    )

    def encode(self, img: np.ndarray) -> np.ndarray:
        return img

    def decode(self, lat: np.ndarray) -> np.ndarray:
        return lat

    def denoise(self, request: protocol.DenoiseRequest) -> np.ndarray:
        return request.z


class ToyModel:
    """Analytic v/eps oracle around the identity codec.

    target T = channel-first guidance composite of the requested branch;
    eps_hat = (z - sqrt(abar) T) / sqrt(1 - abar);
    v = sqrt(abar) eps_hat - sqrt(1 - abar) T.
    """

    name = "toy"
    downscale = 1
    latent_channels = 3
    msg_types = (
        protocol.MSG_HELLO, protocol.MSG_ENCODE, protocol.MSG_DECODE, protocol.MSG_DENOISE,
    )

    def __init__(self, train_steps: int = TRAIN_STEPS):
        self._abar = alphas_bar(train_steps)

    def encode(self, img: np.ndarray) -> np.ndarray:
        if img.ndim != 3:
            raise PayloadError(f"ENCODE expects an HxWxC image, got shape {img.shape}")
        return np.moveaxis(img, 2, 0)

    def decode(self, lat: np.ndarray) -> np.ndarray:
        if lat.ndim != 3:
            raise PayloadError(f"DECODE expects a CxHxW latent, got shape {lat.shape}")
        return np.clip(np.moveaxis(lat, 0, 2), 0.0, None)

    def denoise(self, request: protocol.DenoiseRequest) -> np.ndarray:
        composite = request.groups.get("guidance_composite")
        if composite is None:
            raise PayloadError("toy model needs a 'guidance_composite' channel group")
        target = self.encode(composite)
        if target.shape != request.z.shape:
            raise PayloadError(
                f"composite {target.shape} does not match latent {request.z.shape}"
            )
        if not 0 <= request.timestep < len(self._abar):
            raise PayloadError(f"timestep {request.timestep} outside the schedule")
        abar = self._abar[request.timestep]
        a = np.float32(np.sqrt(abar))
        s = np.float32(np.sqrt(1.0 - abar))
        z = request.z.astype(np.float32)
        eps_hat = (z - a * target) / s
        if request.kind == protocol.KIND_EPS:
            return eps_hat
        return a * eps_hat - s * target
