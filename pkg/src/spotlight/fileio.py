"""File formats at the package boundary: 8/16-bit PNG for displayable images
and masks (sRGB-encoded by convention) and PFM for raw float maps.

PFM files are written little-endian (scale -1.0) with rows bottom-to-top.
All in-memory math stays linear; the sRGB transfer happens here.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .imagecore import LINEAR, SRGB, MaskMap, PixelMap, color_transfer


def write_image_png(path, img: PixelMap) -> None:
    """8-bit PNG; linear inputs are sRGB-encoded first."""
    srgb = color_transfer(img, SRGB) if img.space == LINEAR and not img.signed else img
    data = np.clip(srgb.data, 0.0, 1.0)
    arr = np.round(data * 255.0).astype(np.uint8)
    if arr.shape[2] == 1:
        Image.fromarray(arr[:, :, 0], mode="L").save(path, format="PNG")
    else:
        mode = "RGBA" if arr.shape[2] == 4 else "RGB"
        Image.fromarray(arr, mode=mode).save(path, format="PNG")


def read_image_png(path, to_linear: bool = True) -> PixelMap:
    """Read an sRGB PNG; decode the transfer curve unless ``to_linear=False``."""
    with Image.open(path) as im:
        im.load()
        if im.mode in ("I;16", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode in ("L", "RGB", "RGBA"):
            arr = np.asarray(im, dtype=np.float64) / 255.0
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    srgb = PixelMap(arr.astype(np.float32), SRGB)
    return color_transfer(srgb, LINEAR) if to_linear else srgb


def write_mask_png(path, mask: MaskMap, bit_depth: int = 8) -> None:
    """Masks are stored without a transfer curve (plain fraction of full scale)."""
    if bit_depth == 8:
        arr = np.round(mask.data * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(path, format="PNG")
    elif bit_depth == 16:
        arr = np.round(mask.data.astype(np.float64) * 65535.0).astype(np.uint16)
        Image.fromarray(arr).save(path, format="PNG")  # uint16 maps to I;16
    else:
        raise ValueError("mask bit depth must be 8 or 16")


def read_mask_png(path) -> MaskMap:
    with Image.open(path) as im:
        im.load()
        if im.mode == "I;16":
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode == "I":
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode == "F":
            arr = np.asarray(im, dtype=np.float64)
        else:
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return MaskMap(np.clip(arr, 0.0, 1.0).astype(np.float32))


def write_pfm(path, data: np.ndarray) -> None:
    """PF (3-channel) or Pf (1-channel) float map, little-endian, bottom-up."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 2:
        tag = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM supports HxW or HxWx3, got {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(tag + b"\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.flipud(arr).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    """Returns (H, W) for Pf or (H, W, 3) for PF; scale sign selects endianness."""
    with open(path, "rb") as fh:
        tag = fh.readline().strip()
        if tag not in (b"PF", b"Pf"):
            raise ValueError(f"not a PFM file: tag {tag!r}")
        dims = fh.readline().split()
        if len(dims) != 2:
            raise ValueError("malformed PFM dimensions")
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        channels = 3 if tag == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        raw = fh.read(4 * w * h * channels)
        if len(raw) != 4 * w * h * channels:
            raise ValueError("truncated PFM data")
    arr = np.frombuffer(raw, dtype=dtype).reshape(h, w, channels)
    arr = np.flipud(arr).astype(np.float32)
    return arr[:, :, 0] if channels == 1 else arr
