"""Adapters that put a pretrained latent-diffusion backbone behind DENOISE.

Each adapter maps the request's named channel groups onto the backbone's
conditioning and applies that backbone's masking convention before calling
the model:

- ``zerocomp``: conditions on albedo, normals, depth and a maskable shading
  map; the shading is zeroed over the object and shadow regions (the object
  part may already be pre-masked upstream; the union is applied here).
- ``rgbx``: conditions on albedo, normals, metallic, roughness and a masked
  image; the bounding box covering object and shadow is zeroed out of the
  masked image.

The wrapped model is any callable ``model(z, cond, t) -> (prediction, kind)``
with kind "v" or "eps"; eps predictions are converted to the requested kind
through the schedule identities, so eps-only backbones need no second path.
Actual weight loading lives behind ``resolve_model`` and is configured at
deployment time; conformance tests inject stubs.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import protocol
from .models import alphas_bar
from .protocol import PayloadError

CONDITIONING = {
    "zerocomp": ("albedo", "normals", "depth", "shading"),
    "rgbx": ("albedo", "normals", "metallic", "roughness", "masked_image"),
}

ModelFn = Callable[[np.ndarray, dict[str, np.ndarray], int], tuple[np.ndarray, str]]


class ModelUnavailable(RuntimeError):
    pass


def resolve_model(backbone_id: str) -> ModelFn:
    """Hook for deployments to wire in real weights; nothing ships here."""
    raise ModelUnavailable(
        f"no model configured for backbone {backbone_id!r}; "
        "construct BackboneAdapter with an explicit model callable"
    )


def _union_mask(groups: dict[str, np.ndarray], shape: tuple[int, int]) -> np.ndarray:
    union = np.zeros(shape, dtype=np.float32)
    for name in ("shadow_mask", "object_mask"):
        m = groups.get(name)
        if m is not None:
            if m.shape != shape:
                raise PayloadError(f"{name} shape {m.shape} does not match {shape}")
            union = np.maximum(union, (m >= 0.5).astype(np.float32))
    return union


def _bbox_zero(image: np.ndarray, region: np.ndarray) -> np.ndarray:
    out = image.copy()
    ys, xs = np.nonzero(region >= 0.5)
    if ys.size:
        out[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1] = 0.0
    return out


class BackboneAdapter:
    name = "backbone"
    msg_types = (protocol.MSG_HELLO, protocol.MSG_DENOISE)

    def __init__(
        self,
        backbone_id: str,
        model: ModelFn | None = None,
        downscale: int = 8,
        latent_channels: int = 4,
        train_steps: int = 1000,
    ):
        if backbone_id not in CONDITIONING:
            raise ValueError(f"unknown backbone {backbone_id!r}; have {sorted(CONDITIONING)}")
        self.backbone_id = backbone_id
        self.model = model if model is not None else resolve_model(backbone_id)
        self.downscale = downscale
        self.latent_channels = latent_channels
        self._abar = alphas_bar(train_steps)

    def required_groups(self) -> tuple[str, ...]:
        return CONDITIONING[self.backbone_id]

    def build_conditioning(self, request: protocol.DenoiseRequest) -> dict[str, np.ndarray]:
        cond: dict[str, np.ndarray] = {}
        for name in self.required_groups():
            if name not in request.groups:
                raise PayloadError(f"missing required channel group {name!r}")
            cond[name] = request.groups[name]
        spatial = cond[self.required_groups()[0]].shape[:2]
        if self.backbone_id == "zerocomp":
            mask = _union_mask(request.groups, spatial)
            shading = cond["shading"]
            cond["shading"] = shading * (1.0 - mask)[..., None] if shading.ndim == 3 else shading * (1.0 - mask)
        else:  # rgbx
            mask = _union_mask(request.groups, spatial)
            cond["masked_image"] = _bbox_zero(cond["masked_image"], mask)
        return cond

    def _convert(self, pred: np.ndarray, kind: str, z: np.ndarray, t: int, want: int) -> np.ndarray:
        abar = self._abar[t]
        a = np.float32(np.sqrt(abar))
        s = np.float32(np.sqrt(1.0 - abar))
        if kind == "v":
            if want == protocol.KIND_V:
                return pred
            return s * z + a * pred  # eps from (z, v)
        if kind == "eps":
            if want == protocol.KIND_EPS:
                return pred
            return (pred - s * z) / a  # v from (z, eps)
        raise PayloadError(f"model returned unknown prediction kind {kind!r}")

    def denoise(self, request: protocol.DenoiseRequest) -> np.ndarray:
        cond = self.build_conditioning(request)
        pred, kind = self.model(request.z, cond, request.timestep)
        if pred.shape != request.z.shape:
            raise RuntimeError(f"model returned {pred.shape}, expected {request.z.shape}")
        return self._convert(
            pred.astype(np.float32), kind, request.z.astype(np.float32),
            request.timestep, request.kind,
        )
