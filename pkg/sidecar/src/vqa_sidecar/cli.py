"""Command-line entry point mirroring SidecarConfig."""

from __future__ import annotations

import argparse
import sys

from .server import SidecarConfig, SidecarServer


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vqa-sidecar",
        description="VQA inference backend speaking the contextd wire protocol v1.0.",
    )
    parser.add_argument("--mode", choices=["stub", "model"], default="stub")
    parser.add_argument("--listen", default="127.0.0.1:7801",
                        help="host:port to bind (port 0 picks one)")
    parser.add_argument("--name", default="sidecar")
    parser.add_argument("--model-id", default="",
                        help="pretrained VQA model id (model mode)")
    parser.add_argument("--device", default="cpu", help="device hint for model mode")
    parser.add_argument("--truth", default="", help="ground-truth sidecar file (stub mode)")
    parser.add_argument("--taxonomy", default="",
                        help="published taxonomy data file (stub mode)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--delay-ms", type=float, default=0.0,
                        help="per-question delay, for latency emulation")
    parser.add_argument("--call-overhead-ms", type=float, default=0.0,
                        help="fixed per-call overhead")
    parser.add_argument("--joint", action=argparse.BooleanOptionalAction, default=True,
                        help="advertise joint (fused prompt) capability in stub mode")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    host, _, port = args.listen.rpartition(":")
    try:
        config = SidecarConfig(
            mode=args.mode,
            listen_host=host or "127.0.0.1",
            listen_port=int(port),
            name=args.name,
            model_id=args.model_id,
            device=args.device,
            supports_joint=args.joint,
            truth_path=args.truth,
            taxonomy_path=args.taxonomy,
            seed=args.seed,
            per_question_delay_ms=args.delay_ms,
            per_call_overhead_ms=args.call_overhead_ms,
        )
        server = SidecarServer(config)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"vqa-sidecar serving {args.mode} mode on {server.endpoint}", file=sys.stderr)
    server.serve_forever()
    return 0


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
