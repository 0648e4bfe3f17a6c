"""Image, mask and latent value types plus the pixel ops the sampler builds on.

Everything here is a pure function over immutable numpy-backed value types.
Color math happens in linear space; sRGB appears only at the file boundary.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

ALLOWED_INTRINSIC_NAMES = (
    "albedo",
    "normals",
    "depth",
    "shading",
    "roughness",
    "metallic",
    "masked_image",
)

LINEAR = "linear"
SRGB = "sRGB"


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    arr.flags.writeable = False
    return arr


class PixelMap:
    """H x W x C image in linear radiometric space or sRGB, immutable.

    ``signed=True`` admits negative values in linear space (normal maps and
    other signal-like channels); ordinary radiometric data must be >= 0.
    """

    def __init__(self, data: np.ndarray, space: str = LINEAR, *, signed: bool = False):
        data = np.asarray(data, dtype=np.float32)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3, 4):
            raise ValueError(f"PixelMap expects HxWxC with C in (1,3,4), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("PixelMap data must be finite")
        if space == SRGB:
            if data.min() < -1e-6 or data.max() > 1 + 1e-6:
                raise ValueError("sRGB values must lie in [0, 1]")
            data = np.clip(data, 0.0, 1.0)
        elif space == LINEAR:
            if not signed and data.min() < 0:
                raise ValueError("linear-space values must be >= 0 (use signed=True for signal maps)")
        else:
            raise ValueError(f"unknown color space {space!r}")
        self.data = _freeze(data)
        self.space = space
        self.signed = signed

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __repr__(self) -> str:
        return f"PixelMap({self.width}x{self.height}x{self.channels}, {self.space})"


class MaskMap:
    """H x W single-channel map with values in [0, 1], immutable."""

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=np.float32)
        if data.ndim == 3 and data.shape[2] == 1:
            data = data[:, :, 0]
        if data.ndim != 2:
            raise ValueError(f"MaskMap expects HxW, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("MaskMap data must be finite")
        if data.min() < -1e-6 or data.max() > 1 + 1e-6:
            raise ValueError("MaskMap values must lie in [0, 1]")
        self.data = _freeze(np.clip(data, 0.0, 1.0))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def any(self) -> bool:
        return bool(np.any(self.data > 0))

    @classmethod
    def zeros(cls, width: int, height: int) -> "MaskMap":
        return cls(np.zeros((height, width), dtype=np.float32))

    def __repr__(self) -> str:
        return f"MaskMap({self.width}x{self.height})"


class LatentTensor:
    """C x h x w tensor in the diffusion latent domain, immutable and finite."""

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError(f"LatentTensor expects CxHxW, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("LatentTensor must contain finite values only")
        self.data = _freeze(data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"LatentTensor{self.shape}"


class IntrinsicStack:
    """Ordered, named channel groups conditioning the denoiser."""

    def __init__(self, entries: list[tuple[str, PixelMap]]):
        if entries:
            h, w = entries[0][1].height, entries[0][1].width
            for name, pm in entries:
                if name not in ALLOWED_INTRINSIC_NAMES:
                    raise ValueError(f"unknown intrinsic channel {name!r}")
                if (pm.height, pm.width) != (h, w):
                    raise ValueError("intrinsic maps must share dimensions")
                if name == "normals" and (pm.data.min() < -1 - 1e-6 or pm.data.max() > 1 + 1e-6):
                    raise ValueError("normals channels must lie in [-1, 1]")
                if name == "depth" and pm.data.min() < 0:
                    raise ValueError("depth must be >= 0")
        self.entries = list(entries)

    def names(self) -> list[str]:
        return [name for name, _ in self.entries]

    def get(self, name: str) -> PixelMap | None:
        for n, pm in self.entries:
            if n == name:
                return pm
        return None

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


# --- color transfer -----------------------------------------------------------

def srgb_to_linear(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(values: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.where(v <= 0.0031308, v * 12.92, 1.055 * v ** (1 / 2.4) - 0.055)


def color_transfer(img: PixelMap, target: str) -> PixelMap:
    """Convert between linear and sRGB encodings; alpha channels pass through."""
    if target not in (LINEAR, SRGB):
        raise ValueError(f"unknown color space {target!r}")
    if img.space == target:
        return img
    data = img.data.astype(np.float64)
    color = data[:, :, :3] if img.channels >= 3 else data
    curve = srgb_to_linear if target == LINEAR else linear_to_srgb
    out = data.copy()
    if img.channels >= 3:
        out[:, :, :3] = curve(color)
    else:
        out = curve(color)
    return PixelMap(out.astype(np.float32), target)


# --- morphology & resampling --------------------------------------------------

def binarize_mask(m: MaskMap, threshold: float = 0.5) -> MaskMap:
    return MaskMap((m.data >= threshold).astype(np.float32))


def dilate_mask(m: MaskMap, k: int = 33) -> MaskMap:
    """Binarize at 0.5, then take the max over a k x k window (clipped at borders)."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"dilation kernel must be odd and >= 1, got {k}")
    binary = (m.data >= 0.5).astype(np.float32)
    if k == 1:
        return MaskMap(binary)
    # constant zero padding equals a border-clipped max for non-negative masks
    out = ndimage.maximum_filter(binary, size=k, mode="constant", cval=0.0)
    return MaskMap(out)


def _resample_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-output tap indices and normalized triangle-filter weights.

    The triangle support is stretched by the downsampling ratio so every
    source pixel contributes (area-weighted bilinear); at equal or higher
    resolution it reduces to ordinary bilinear interpolation.
    """
    scale = n_in / n_out
    support = max(1.0, scale)
    centers = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    lo = np.floor(centers - support).astype(int) + 1
    n_taps = int(np.ceil(2 * support))
    offsets = np.arange(n_taps)
    idx = lo[:, None] + offsets[None, :]
    dist = np.abs(idx - centers[:, None]) / support
    weights = np.clip(1.0 - dist, 0.0, None)
    idx = np.clip(idx, 0, n_in - 1)
    weights /= weights.sum(axis=1, keepdims=True)
    return idx, weights


def _resample_axis(data: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = data.shape[axis]
    if n_in == n_out:
        return data
    idx, weights = _resample_weights(n_in, n_out)
    moved = np.moveaxis(data.astype(np.float64), axis, 0)
    out = np.einsum("ot,ot...->o...", weights, moved[idx])
    return np.moveaxis(out, 0, axis)


def downsample_bilinear(m, out_w: int, out_h: int):
    """Area-weighted bilinear resampling of a MaskMap or PixelMap."""
    if out_w < 1 or out_h < 1:
        raise ValueError("target dimensions must be >= 1")
    if isinstance(m, MaskMap):
        out = _resample_axis(_resample_axis(m.data, out_h, 0), out_w, 1)
        return MaskMap(np.clip(out, 0.0, 1.0))
    if isinstance(m, PixelMap):
        out = _resample_axis(_resample_axis(m.data, out_h, 0), out_w, 1)
        if m.space == SRGB:
            out = np.clip(out, 0.0, 1.0)
        elif not m.signed:
            out = np.clip(out, 0.0, None)
        return PixelMap(out.astype(np.float32), m.space, signed=m.signed)
    raise TypeError(f"cannot resample {type(m).__name__}")


# --- guidance composite ---------------------------------------------------------

def make_guidance_composite(
    bg: PixelMap,
    albedo: PixelMap,
    m_obj: MaskMap,
    m_shw: MaskMap,
    shadow_gain: float,
) -> PixelMap:
    """Paint the object albedo and a darkened shadow over the background.

    g = m_obj * albedo + (1 - m_obj) * (bg * (1 - m_shw * (1 - shadow_gain)))

    The object matte wins over the shadow where the two overlap; shadow_gain is
    the linear-space attenuation left inside the painted shadow.
    """
    if not (0.0 < shadow_gain <= 1.0):
        raise ValueError(f"shadow_gain must lie in (0, 1], got {shadow_gain}")
    if bg.space != LINEAR or albedo.space != LINEAR:
        raise ValueError("guidance composite operates in linear space")
    shape = (bg.height, bg.width)
    for other in (albedo.data.shape[:2], m_obj.data.shape, m_shw.data.shape):
        if tuple(other) != shape:
            raise ValueError("guidance composite inputs must share dimensions")
    obj = m_obj.data[:, :, None]
    shw = m_shw.data[:, :, None]
    shadowed_bg = bg.data * (1.0 - shw * (1.0 - np.float32(shadow_gain)))
    g = obj * albedo.data + (1.0 - obj) * shadowed_bg
    return PixelMap(g, LINEAR)
