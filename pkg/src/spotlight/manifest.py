"""Scene manifests: JSON description of one render job, validation, and
assembly into a SceneBundle plus shadow masks.

Schema (version 1):
  {
    "schema": 1,
    "background": "bg.png",                     # PNG (sRGB) or PFM (linear)
    "background_depth": "depth.pfm",            # optional, for shadow mapping
    "object": {"albedo": ..., "mask": ..., "depth": ...},
    "intrinsics": {"albedo": ..., "normals": ..., ...},   # optional
    "shadow": exactly one of
        {"type": "directional", "azimuth": deg, "elevation": deg}
        {"type": "point", "x": px, "y": px, "h": px, "radius": px}
        {"type": "scribble", "path": ...}
        {"type": "mask", "path": ..., "negative_path": ...(optional)}
    "camera": {"fov_deg": 50},
    "guidance": {"gamma": ..., "beta": ..., "steps": ..., "seed": ...,
                 "dilation_kernel": ..., "shadow_gain": ...},
    "provenance": {"any map name": "free text about its estimator"}
  }

Intrinsic maps are precomputed inputs; nothing is estimated here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio
from .guidance import GuidanceConfig, SceneBundle
from .imagecore import LINEAR, IntrinsicStack, MaskMap, PixelMap
from .shadowsynth import (
    DirectionalLight,
    PointLight2D,
    backproject_depth,
    ingest_scribble,
    negative_light_position,
    pixel_height_estimate,
    shadow_map_directional,
    soft_shadow_point_light,
)

SHADOW_TYPES = ("directional", "point", "scribble", "mask")


class ManifestError(ValueError):
    """Invalid or unreadable scene manifest; maps to CLI exit code 2."""


def _require(cond: bool, message: str):
    if not cond:
        raise ManifestError(message)


def load_pixelmap(path: Path, *, signed: bool = False) -> PixelMap:
    if path.suffix.lower() == ".pfm":
        arr = fileio.read_pfm(path)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        return PixelMap(arr, LINEAR, signed=signed)
    return fileio.read_image_png(path, to_linear=True)


def load_mask(path: Path) -> MaskMap:
    if path.suffix.lower() == ".pfm":
        arr = fileio.read_pfm(path)
        return MaskMap(np.clip(arr if arr.ndim == 2 else arr[:, :, 0], 0.0, 1.0))
    return fileio.read_mask_png(path)


@dataclass
class SceneManifest:
    path: Path
    root: Path
    data: dict

    @property
    def shadow_spec(self) -> dict:
        return self.data["shadow"]

    @property
    def fov_deg(self) -> float:
        return float(self.data.get("camera", {}).get("fov_deg", 50.0))

    def resolve(self, rel: str) -> Path:
        return (self.root / rel).resolve()

    def guidance_config(self, **overrides) -> GuidanceConfig:
        merged = dict(self.data.get("guidance", {}))
        merged.update({k: v for k, v in overrides.items() if v is not None})
        allowed = {
            "gamma", "beta", "dilation_kernel", "steps", "seed",
            "shadow_gain", "positive_only", "train_steps",
        }
        unknown = set(merged) - allowed
        _require(not unknown, f"unknown guidance keys: {sorted(unknown)}")
        try:
            return GuidanceConfig(**merged)
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"invalid guidance config: {exc}") from exc


def load_manifest(path) -> SceneManifest:
    path = Path(path)
    _require(path.is_file(), f"manifest not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    _require(isinstance(data, dict), "manifest must be a JSON object")
    _require(data.get("schema") == 1, "manifest schema must be 1")
    _require("background" in data, "manifest missing 'background'")
    obj = data.get("object")
    _require(isinstance(obj, dict), "manifest missing 'object' section")
    _require("albedo" in obj and "mask" in obj, "object section needs 'albedo' and 'mask'")
    shadow = data.get("shadow")
    _require(isinstance(shadow, dict), "manifest missing 'shadow' section")
    stype = shadow.get("type")
    _require(stype in SHADOW_TYPES, f"shadow type must be one of {SHADOW_TYPES}")

    manifest = SceneManifest(path=path, root=path.parent, data=data)

    # validation-first: every referenced file must exist and decode
    for rel in manifest_input_files(manifest):
        p = manifest.resolve(rel)
        _require(p.is_file(), f"referenced file not found: {p}")
        try:
            if p.suffix.lower() == ".pfm":
                fileio.read_pfm(p)
            else:
                fileio.read_image_png(p, to_linear=False)
        except Exception as exc:
            raise ManifestError(f"cannot decode {p}: {exc}") from exc
    return manifest


def manifest_input_files(manifest: SceneManifest) -> list[str]:
    data = manifest.data
    files = [data["background"], data["object"]["albedo"], data["object"]["mask"]]
    if data["object"].get("depth"):
        files.append(data["object"]["depth"])
    if data.get("background_depth"):
        files.append(data["background_depth"])
    files.extend(data.get("intrinsics", {}).values())
    shadow = data["shadow"]
    if shadow["type"] == "scribble":
        _require("path" in shadow, "scribble shadow needs 'path'")
        files.append(shadow["path"])
    elif shadow["type"] == "mask":
        _require("path" in shadow, "mask shadow needs 'path'")
        files.append(shadow["path"])
        if shadow.get("negative_path"):
            files.append(shadow["negative_path"])
    return files


def _object_bottom_center(m_obj: MaskMap) -> tuple[float, float]:
    ys, xs = np.nonzero(m_obj.data >= 0.5)
    if ys.size == 0:
        raise ValueError("object mask is empty")
    return (float(xs.min() + xs.max()) / 2.0, float(ys.max()))


def shadow_masks(
    manifest: SceneManifest, m_obj: MaskMap, negative: str = "opposite"
) -> tuple[MaskMap, MaskMap | None]:
    """Positive and (where derivable) negative shadow masks for the manifest's
    shadow spec. ``negative="noshadow"`` forces the empty-mask fallback."""
    spec = manifest.shadow_spec
    stype = spec["type"]
    want_neg = negative == "opposite"

    if stype == "directional":
        _require(
            manifest.data.get("background_depth") is not None,
            "directional shadows need 'background_depth'",
        )
        _require(
            manifest.data["object"].get("depth") is not None,
            "directional shadows need object depth",
        )
        bg_depth = load_pixelmap(manifest.resolve(manifest.data["background_depth"]))
        obj_depth = load_pixelmap(manifest.resolve(manifest.data["object"]["depth"]))
        ground = backproject_depth(bg_depth, manifest.fov_deg)
        obj_field = backproject_depth(obj_depth, manifest.fov_deg)
        light = DirectionalLight.from_angles(float(spec["azimuth"]), float(spec["elevation"]))
        pos = shadow_map_directional(ground, obj_field, m_obj, light)
        neg = (
            shadow_map_directional(ground, obj_field, m_obj, light.opposite_azimuth())
            if want_neg
            else None
        )
        return pos, neg

    if stype == "point":
        light = PointLight2D(
            x=float(spec["x"]), y=float(spec["y"]), h=float(spec["h"]),
            radius=float(spec.get("radius", 0.0)),
        )
        heights = pixel_height_estimate(m_obj)
        pos = soft_shadow_point_light(m_obj, heights, light)
        if not want_neg:
            return pos, None
        bottom = _object_bottom_center(m_obj)
        neg_light = negative_light_position(light, bottom, m_obj.width, m_obj.height)
        return pos, soft_shadow_point_light(m_obj, heights, neg_light)

    if stype == "scribble":
        scribble = fileio.read_image_png(manifest.resolve(spec["path"]), to_linear=False)
        return ingest_scribble(scribble), None

    pos = load_mask(manifest.resolve(spec["path"]))
    neg = load_mask(manifest.resolve(spec["negative_path"])) if (
        want_neg and spec.get("negative_path")
    ) else None
    return pos, neg


def build_scene(manifest: SceneManifest, negative: str = "opposite") -> SceneBundle:
    data = manifest.data
    background = load_pixelmap(manifest.resolve(data["background"]))
    albedo = load_pixelmap(manifest.resolve(data["object"]["albedo"]))
    m_obj = load_mask(manifest.resolve(data["object"]["mask"]))

    entries = []
    for name, rel in data.get("intrinsics", {}).items():
        signed = name == "normals"
        entries.append((name, load_pixelmap(manifest.resolve(rel), signed=signed)))
    intrinsics = IntrinsicStack(entries)

    m_pos, m_neg = shadow_masks(manifest, m_obj, negative)
    return SceneBundle(
        background=background,
        object_albedo=albedo,
        m_obj=m_obj,
        m_shw_pos=m_pos,
        m_shw_neg=m_neg,
        intrinsics=intrinsics,
    )
