"""Deterministic desk-scale scenes for demos and end-to-end verification.

A toy scene is a smooth background, an elliptical object cutout, and a shadow
blob with its mirrored negative; it can live purely in memory or be written
out as manifest + image files for the CLI.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import fileio
from .guidance import SceneBundle
from .imagecore import LINEAR, IntrinsicStack, MaskMap, PixelMap, downsample_bilinear


def _smooth_noise(rng: np.random.Generator, size: int, channels: int, lo: float, hi: float) -> np.ndarray:
    coarse = rng.uniform(lo, hi, (8, 8, channels)).astype(np.float32)
    pm = downsample_bilinear(PixelMap(coarse, LINEAR, signed=lo < 0), size, size)
    return pm.data


def _ellipse(size: int, cx: float, cy: float, rx: float, ry: float) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size]
    return ((((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2) <= 1.0).astype(np.float32)


def make_scene_bundle(seed: int, size: int = 64) -> SceneBundle:
    rng = np.random.default_rng([seed, 0x70])
    bg = PixelMap(_smooth_noise(rng, size, 3, 0.2, 0.8), LINEAR)
    albedo_base = rng.uniform(0.3, 0.9, 3).astype(np.float32)
    albedo = PixelMap(
        np.clip(albedo_base[None, None, :] + 0.1 * _smooth_noise(rng, size, 3, -1.0, 1.0), 0.05, 1.0),
        LINEAR,
    )

    ocx = size * rng.uniform(0.4, 0.6)
    ocy = size * rng.uniform(0.35, 0.5)
    orx = size * rng.uniform(0.1, 0.18)
    ory = size * rng.uniform(0.12, 0.2)
    m_obj = MaskMap(_ellipse(size, ocx, ocy, orx, ory))

    # shadow blob anchored at the object's base, pushed to one side
    side = 1.0 if rng.random() < 0.5 else -1.0
    scx = ocx + side * size * rng.uniform(0.12, 0.22)
    scy = ocy + ory + size * rng.uniform(0.02, 0.08)
    srx = orx * rng.uniform(1.0, 1.6)
    sry = ory * rng.uniform(0.35, 0.6)
    m_shw_pos = MaskMap(_ellipse(size, scx, scy, srx, sry))
    m_shw_neg = MaskMap(_ellipse(size, 2 * ocx - scx, scy, srx, sry))

    return SceneBundle(
        background=bg,
        object_albedo=albedo,
        m_obj=m_obj,
        m_shw_pos=m_shw_pos,
        m_shw_neg=m_shw_neg,
        intrinsics=IntrinsicStack([("albedo", albedo)]),
    )


def write_toy_scene(directory, seed: int, size: int = 64, guidance: dict | None = None) -> Path:
    """Write a toy scene as CLI-consumable files; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    scene = make_scene_bundle(seed, size)

    fileio.write_image_png(directory / "bg.png", scene.background)
    fileio.write_image_png(directory / "albedo.png", scene.object_albedo)
    fileio.write_mask_png(directory / "mask.png", scene.m_obj)
    fileio.write_mask_png(directory / "shadow_pos.png", scene.m_shw_pos)
    fileio.write_mask_png(directory / "shadow_neg.png", scene.m_shw_neg)

    manifest = {
        "schema": 1,
        "background": "bg.png",
        "object": {"albedo": "albedo.png", "mask": "mask.png"},
        "intrinsics": {"albedo": "albedo.png"},
        "shadow": {"type": "mask", "path": "shadow_pos.png", "negative_path": "shadow_neg.png"},
        "camera": {"fov_deg": 50.0},
        "guidance": {"seed": seed, **(guidance or {})},
        "provenance": {"albedo": "toy scene generator"},
    }
    path = directory / "scene.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path
