"""Batch front door: `spotlight shadow | render | eval | study`.

Exit codes: 0 success, 2 manifest/validation error, 3 geometry failure,
4 denoiser or transport failure, 5 non-finite latents. Commands validate all
inputs and finish computing before the first output file is written.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import fileio
from .compositor import detail_transfer, preserve_background, shadow_matte
from .denoisers import IdentityCodec, SidecarClient, ToyDenoiser
from .guidance import DenoiserFailure, NaNAbort, run_sampler
from .imagecore import LINEAR, PixelMap
from .manifest import (
    ManifestError,
    build_scene,
    load_manifest,
    load_mask,
    manifest_input_files,
    shadow_masks,
)
from .metrics import (
    VotesFormatError,
    pixel_metrics,
    preference_matrix_from_votes,
    read_votes_csv,
    report_csv,
    thurstone_case_v,
)
from .scheduler import make_schedule
from .wire import ProtocolError, RemoteError, TransportError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_GEOMETRY = 3
EXIT_DENOISER = 4
EXIT_NAN = 5

SIDECAR_ENV = "SPOTLIGHT_SIDECAR_ADDR"
RECORD_SCHEMA = 1


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _print_table(headers: list[str], rows: list[list]):
    def fmt(cell) -> str:
        return f"{cell:.6f}" if isinstance(cell, float) else str(cell)

    cells = [[fmt(c) for c in row] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h) for i, h in enumerate(headers)]
    print("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    for row in cells:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))


# --- shadow ---------------------------------------------------------------------


def cmd_shadow(args) -> int:
    try:
        manifest = load_manifest(args.manifest)
    except ManifestError as exc:
        return _fail(EXIT_USAGE, str(exc))
    try:
        m_obj = load_mask(manifest.resolve(manifest.data["object"]["mask"]))
        spec_type = manifest.shadow_spec["type"]
        expected = {"map": "directional", "pixht": "point", "scribble": "scribble"}[args.mode]
        if spec_type != expected:
            return _fail(
                EXIT_USAGE,
                f"mode {args.mode} expects a {expected!r} shadow spec, manifest has {spec_type!r}",
            )
        pos, neg = shadow_masks(manifest, m_obj, negative="opposite")
    except ManifestError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except ValueError as exc:
        return _fail(EXIT_GEOMETRY, f"shadow geometry failed: {exc}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_mask_png(out / "shadow_pos.png", pos)
    print(f"wrote {out / 'shadow_pos.png'}")
    if args.mode in ("map", "pixht"):
        fileio.write_mask_png(out / "shadow_neg.png", neg)
        print(f"wrote {out / 'shadow_neg.png'}")
    if not pos.any():
        print("warning: shadow mask is empty", file=sys.stderr)
    return EXIT_OK


# --- render ---------------------------------------------------------------------


def _render_once(manifest_path, args) -> tuple[dict[str, object], dict]:
    """Full render to in-memory artifacts plus the reproducibility record."""
    manifest = load_manifest(manifest_path)
    cfg = manifest.guidance_config(
        gamma=args.gamma,
        beta=args.beta,
        steps=args.steps,
        seed=args.seed,
        positive_only=args.positive_only or None,
    )
    try:
        scene = build_scene(manifest, negative=args.negative)
    except ManifestError:
        raise
    except ValueError as exc:
        raise GeometryFailure(str(exc)) from exc

    if args.denoiser == "toy":
        codec = IdentityCodec(channels=scene.background.channels)
        schedule = make_schedule(cfg.train_steps, cfg.steps)
        denoiser = ToyDenoiser(schedule, codec)
    else:
        addr = args.sidecar_addr or os.environ.get(SIDECAR_ENV)
        if not addr:
            raise ManifestError(f"--sidecar-addr or ${SIDECAR_ENV} required for --denoiser sidecar")
        client = SidecarClient.connect(addr)
        codec = client
        schedule = make_schedule(cfg.train_steps, cfg.steps)
        denoiser = client

    result = run_sampler(scene, cfg, denoiser, codec, schedule)
    matte = shadow_matte(result.image_with, result.image_without)
    final = preserve_background(scene.background, result.image_with, matte, scene.m_obj)
    dt = manifest.data.get("detail_transfer")
    if dt:
        final = detail_transfer(
            scene.object_albedo, final, sigma=float(dt.get("sigma", 1.0)), mask=scene.m_obj
        )

    artifacts: dict[str, object] = {
        "composite.png": final,
        "matte.pfm": matte.data,
        "render_with.png": result.image_with,
        "render_without.png": result.image_without,
        "render_with.pfm": result.image_with.data,
        "render_without.pfm": result.image_without.data,
    }
    record = {
        "schema": RECORD_SCHEMA,
        "command": "render",
        "manifest": str(Path(manifest_path).resolve()),
        "params": {
            **asdict(cfg),
            "denoiser": args.denoiser,
            "negative": args.negative,
            "sidecar_addr": args.sidecar_addr,
        },
        "inputs": {
            rel: _sha256(manifest.resolve(rel)) for rel in manifest_input_files(manifest)
        },
    }
    return artifacts, record


class GeometryFailure(RuntimeError):
    pass


def _write_artifacts(out: Path, artifacts: dict[str, object], record: dict) -> dict[str, str]:
    out.mkdir(parents=True, exist_ok=True)
    for name, value in artifacts.items():
        path = out / name
        if name.endswith(".png"):
            fileio.write_image_png(path, value)
        else:
            fileio.write_pfm(path, value)
    hashes = {name: _sha256(out / name) for name in sorted(artifacts)}
    record = {**record, "outputs": hashes}
    (out / "record.json").write_text(
        json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return hashes


def cmd_render(args) -> int:
    if args.replay:
        return _replay(args)
    try:
        artifacts, record = _render_once(args.manifest, args)
    except ManifestError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except GeometryFailure as exc:
        return _fail(EXIT_GEOMETRY, f"shadow geometry failed: {exc}")
    except NaNAbort as exc:
        return _fail(EXIT_NAN, str(exc))
    except (DenoiserFailure, TransportError, RemoteError, ProtocolError) as exc:
        return _fail(EXIT_DENOISER, str(exc))
    _write_artifacts(Path(args.out), artifacts, record)
    print(f"wrote {len(artifacts) + 1} artifacts to {args.out}")
    return EXIT_OK


def _replay(args) -> int:
    record_path = Path(args.replay)
    if not record_path.is_file():
        return _fail(EXIT_USAGE, f"record not found: {record_path}")
    record = json.loads(record_path.read_text(encoding="utf-8"))
    if record.get("schema") != RECORD_SCHEMA or record.get("command") != "render":
        return _fail(EXIT_USAGE, "not a render reproducibility record")
    params = record["params"]
    ns = argparse.Namespace(
        gamma=params["gamma"],
        beta=params["beta"],
        steps=params["steps"],
        seed=params["seed"],
        positive_only=params["positive_only"],
        negative=params["negative"],
        denoiser=params["denoiser"],
        sidecar_addr=params["sidecar_addr"],
    )
    try:
        artifacts, new_record = _render_once(record["manifest"], ns)
    except ManifestError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except GeometryFailure as exc:
        return _fail(EXIT_GEOMETRY, str(exc))
    except NaNAbort as exc:
        return _fail(EXIT_NAN, str(exc))
    except (DenoiserFailure, TransportError, RemoteError, ProtocolError) as exc:
        return _fail(EXIT_DENOISER, str(exc))
    hashes = _write_artifacts(Path(args.out), artifacts, new_record)
    expected = record.get("outputs", {})
    mismatched = sorted(name for name in expected if hashes.get(name) != expected[name])
    if mismatched:
        return _fail(1, f"replay outputs differ from record: {', '.join(mismatched)}")
    print(f"replay verified: {len(expected)} artifacts byte-identical")
    return EXIT_OK


# --- eval -----------------------------------------------------------------------

IMAGE_SUFFIXES = (".png", ".pfm")
METRIC_COLUMNS = ("psnr", "ssim", "rmse", "mae")


def _load_for_eval(path: Path) -> PixelMap:
    if path.suffix.lower() == ".pfm":
        arr = fileio.read_pfm(path)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        return PixelMap(np.clip(arr, 0.0, 1.0), LINEAR)
    # compare PNGs in their display encoding
    return fileio.read_image_png(path, to_linear=False)


def cmd_eval(args) -> int:
    pred_dir, ref_dir = Path(args.pred), Path(args.ref)
    if not pred_dir.is_dir() or not ref_dir.is_dir():
        return _fail(EXIT_USAGE, "pred and ref must be directories")

    def stems(d: Path) -> dict[str, Path]:
        return {p.stem: p for p in sorted(d.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}

    preds, refs = stems(pred_dir), stems(ref_dir)
    if set(preds) != set(refs):
        diff = sorted(set(preds) ^ set(refs))
        return _fail(EXIT_USAGE, f"unmatched files between pred and ref: {', '.join(diff)}")
    if not preds:
        return _fail(EXIT_USAGE, "no images to evaluate")
    masks = stems(Path(args.mask_dir)) if args.mask_dir else {}

    wanted = [m.strip() for m in args.metrics.split(",")] if args.metrics else list(METRIC_COLUMNS)
    unknown = set(wanted) - set(METRIC_COLUMNS)
    if unknown:
        return _fail(EXIT_USAGE, f"unknown metrics: {', '.join(sorted(unknown))}")

    rows = []
    for stem in sorted(preds):
        mask = None
        if masks:
            if stem not in masks:
                return _fail(EXIT_USAGE, f"missing mask for {stem}")
            mask = load_mask(masks[stem])
        try:
            report = pixel_metrics(_load_for_eval(preds[stem]), _load_for_eval(refs[stem]), mask)
        except ValueError as exc:
            return _fail(EXIT_USAGE, f"{stem}: {exc}")
        rows.append([stem] + [float(getattr(report, m)) for m in wanted])

    mean_row = ["mean"] + [float(np.mean([r[i + 1] for r in rows])) for i in range(len(wanted))]
    rows.append(mean_row)
    headers = ["image"] + list(wanted)
    _print_table(headers, rows)
    if args.csv:
        Path(args.csv).write_text(report_csv(headers, rows), encoding="utf-8")
        print(f"wrote {args.csv}")
    return EXIT_OK


# --- study ----------------------------------------------------------------------


def cmd_study(args) -> int:
    try:
        votes = read_votes_csv(args.votes)
    except FileNotFoundError:
        return _fail(EXIT_USAGE, f"votes file not found: {args.votes}")
    except VotesFormatError as exc:
        return _fail(EXIT_USAGE, f"malformed votes CSV: {exc}")
    if not votes:
        return _fail(EXIT_USAGE, "votes CSV contains no votes")
    pref = preference_matrix_from_votes(votes)
    try:
        result = thurstone_case_v(pref, bootstrap=args.bootstrap, seed=args.seed, votes=votes)
    except ValueError as exc:
        return _fail(EXIT_USAGE, str(exc))

    order = np.argsort(-result.z, kind="stable")
    headers = ["method", "z"]
    if result.ci_low is not None:
        headers += ["ci_low", "ci_high"]
    rows = []
    for i in order:
        row = [result.methods[i], float(result.z[i])]
        if result.ci_low is not None:
            row += [float(result.ci_low[i]), float(result.ci_high[i])]
        rows.append(row)
    _print_table(headers, rows)
    if args.csv:
        Path(args.csv).write_text(report_csv(headers, rows), encoding="utf-8")
        print(f"wrote {args.csv}")
    return EXIT_OK


# --- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spotlight", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("shadow", help="synthesize shadow masks from a scene manifest")
    p.add_argument("manifest")
    p.add_argument("--mode", choices=("map", "pixht", "scribble"), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_shadow)

    p = sub.add_parser("render", help="run the shadow-guided sampler on a scene")
    p.add_argument("manifest", nargs="?")
    p.add_argument("--steps", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--denoiser", choices=("toy", "sidecar"), default="toy")
    p.add_argument("--sidecar-addr")
    p.add_argument("--negative", choices=("opposite", "noshadow"), default="opposite")
    p.add_argument("--positive-only", action="store_true")
    p.add_argument("--replay", help="re-run from a reproducibility record and verify hashes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="reference-based metrics over matching files")
    p.add_argument("pred")
    p.add_argument("ref")
    p.add_argument("--mask-dir")
    p.add_argument("--metrics", help="comma-separated subset of psnr,ssim,rmse,mae")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("study", help="Thurstone Case V scaling of 2AFC votes")
    p.add_argument("votes")
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_study)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "render" and not args.replay and not args.manifest:
        print("error: render needs a manifest (or --replay)", file=sys.stderr)
        return EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
