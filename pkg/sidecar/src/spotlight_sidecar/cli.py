"""`spotlight-sidecar --listen host:port --mode echo|toy|backbone [--backbone id]`"""

from __future__ import annotations

import argparse
import sys

from .backbones import ModelUnavailable
from .server import DEFAULT_MAX_FRAME, ServerConfig, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spotlight-sidecar", description=__doc__)
    parser.add_argument("--listen", default="127.0.0.1:0",
                        help="host:port to bind, or 'stdio' for pipe serving")
    parser.add_argument("--mode", choices=("echo", "toy", "backbone"), default="toy")
    parser.add_argument("--backbone", help="backbone id (zerocomp or rgbx) for backbone mode")
    parser.add_argument("--device", help="device hint passed to the backbone")
    parser.add_argument("--max-frame", type=int, default=DEFAULT_MAX_FRAME)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = ServerConfig(
        listen=args.listen, mode=args.mode, backbone=args.backbone,
        device=args.device, max_frame=args.max_frame,
    )
    try:
        serve(config)
    except (ValueError, ModelUnavailable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
