"""Final-composite assembly: shadow matte, background preservation, detail
transfer, and exposure wrappers for over-bright backbones.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy import ndimage

from .imagecore import LINEAR, MaskMap, PixelMap


class ShadowMatte:
    """Per-pixel attenuation in [0, 1]; multiplies the background."""

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError("shadow matte must be HxWxC")
        if data.min() < 0 or data.max() > 1:
            raise ValueError("matte values must lie in [0, 1]")
        data = data.copy()
        data.flags.writeable = False
        self.data = data


def shadow_matte(img_with: PixelMap, img_without: PixelMap, eps: float = 1e-4) -> ShadowMatte:
    """Ratio of the renders with and without shadow guidance, clamped to [0, 1].

    Shadows only darken, so the clamp discards speckle brighter than the
    shadow-free render; near-black denominators fall back to matte = 1.
    """
    if img_with.data.shape != img_without.data.shape:
        raise ValueError("matte inputs must share dimensions")
    if img_with.space != LINEAR or img_without.space != LINEAR:
        raise ValueError("matte operates in linear space")
    num = img_with.data.astype(np.float64)
    den = img_without.data.astype(np.float64)
    matte = np.clip(num / (den + eps), 0.0, 1.0)
    matte = np.where(den < eps, 1.0, matte)
    return ShadowMatte(matte.astype(np.float32))


def preserve_background(
    bg: PixelMap, img_with: PixelMap, matte: ShadowMatte, m_obj: MaskMap
) -> PixelMap:
    """out = m_obj * img_with + (1 - m_obj) * (bg (*) matte).

    Outside the object only the matte touches the background, so the
    diffusion process cannot drift it.
    """
    if bg.data.shape != img_with.data.shape or bg.data.shape != matte.data.shape:
        raise ValueError("composite inputs must share dimensions")
    if m_obj.data.shape != bg.data.shape[:2]:
        raise ValueError("object mask must match image dimensions")
    obj = m_obj.data[:, :, None]
    out = obj * img_with.data + (1.0 - obj) * (bg.data * matte.data)
    return PixelMap(out, LINEAR)


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(data: np.ndarray, sigma: float) -> np.ndarray:
    """Separable normalized Gaussian, radius ceil(3*sigma), reflect padding."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    k = _gaussian_kernel(sigma)
    out = data.astype(np.float64)
    for axis in (0, 1):
        out = ndimage.correlate1d(out, k, axis=axis, mode="reflect")
    return out


def detail_transfer(
    src: PixelMap, tgt: PixelMap, sigma: float = 1.0, mask: MaskMap | None = None
) -> PixelMap:
    """Unsharp-style detail reinjection: add (src - blur(src, sigma)) to tgt.

    With a mask, the detail layer only lands inside it (the inserted cutout).
    """
    if src.data.shape != tgt.data.shape:
        raise ValueError("detail transfer inputs must share dimensions")
    src64 = src.data.astype(np.float64)
    detail = src64 - np.stack(
        [gaussian_blur(src64[:, :, c], sigma) for c in range(src.channels)], axis=2
    )
    if mask is not None:
        detail = detail * mask.data[:, :, None]
    return PixelMap(np.clip(tgt.data + detail, 0.0, None).astype(np.float32), tgt.space)


def reexposed_render(
    render: Callable[[PixelMap], PixelMap], factor: float = 2.0
) -> Callable[[PixelMap], PixelMap]:
    """Wrap a render callable: scale its linear input up by ``factor`` and its
    linear output back down, countering an over-bright backbone."""
    if factor <= 0:
        raise ValueError("exposure factor must be > 0")

    def wrapped(img: PixelMap, *args, **kwargs) -> PixelMap:
        if img.space != LINEAR:
            raise ValueError("exposure wrapping operates in linear space")
        boosted = PixelMap(img.data * np.float32(factor), LINEAR, signed=img.signed)
        out = render(boosted, *args, **kwargs)
        return PixelMap(out.data / np.float32(factor), out.space, signed=out.signed)

    return wrapped
