"""chronos-bridge command line: serve the protocol, or fine-tune a checkpoint."""

from __future__ import annotations

import argparse
import sys

from .backends import BUILTIN, BridgeConfig, StartupError, load_backend
from .finetune import DataError, FinetuneSettings, finetune
from .protocol import serve_stdio, serve_tcp


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chronos-bridge")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="answer protocol-v1 requests until EOF")
    p.add_argument(
        "--checkpoint",
        default=BUILTIN,
        help=f"small | base | large | {BUILTIN} | local checkpoint path",
    )
    p.add_argument("--device", default="cpu")
    p.add_argument("--n-samples", dest="n_samples", type=int, default=20,
                   help="default sample count when a request omits it")
    p.add_argument("--max-context", dest="max_context", type=int, default=512)
    p.add_argument("--tcp", metavar="HOST:PORT", help="serve over TCP instead of stdio")

    p = sub.add_parser("finetune", help="adapt a checkpoint to a trajectory CSV")
    p.add_argument("--checkpoint", default="small")
    p.add_argument("--device", default="cpu")
    p.add_argument("--data", required=True, help="canonical trajectory CSV")
    p.add_argument("--out", required=True, help="output checkpoint directory")
    p.add_argument("--context", type=int, default=60)
    p.add_argument("--horizon", type=int, default=30)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "serve":
            config = BridgeConfig(
                checkpoint=args.checkpoint,
                device=args.device,
                default_n_samples=args.n_samples,
                max_context=args.max_context,
            )
            backend = load_backend(config)
            if args.tcp:
                host, _, port = args.tcp.rpartition(":")
                serve_tcp(backend, config.default_n_samples, host or "127.0.0.1", int(port))
            else:
                serve_stdio(backend, config.default_n_samples)
            return 0
        if args.command == "finetune":
            config = BridgeConfig(checkpoint=args.checkpoint, device=args.device)
            settings = FinetuneSettings(
                context=args.context,
                horizon=args.horizon,
                steps=args.steps,
                learning_rate=args.lr,
                batch_size=args.batch_size,
                seed=args.seed,
            )
            path = finetune(config, args.data, args.out, settings)
            print(path)
            return 0
        return 2
    except (StartupError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
