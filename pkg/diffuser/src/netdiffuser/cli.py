"""Command line: train a planner checkpoint and serve it over the bridge."""

from __future__ import annotations

import argparse
import sys

from .config import DiffuserConfig
from .training import load_checkpoint, save_checkpoint, train


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="netdiffuser")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a trajectory dataset")
    p.add_argument("--data", required=True, help="trajectory dataset file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--steps", type=int, default=50, help="diffusion steps K")
    p.add_argument("--horizon", type=int, default=16)
    p.add_argument("--history", type=int, default=4)
    p.add_argument("--guidance", type=float, default=1.5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="serve a checkpoint over the bridge")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=9000)
    p.add_argument("--target-return", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    if args.command == "train":
        cfg = DiffuserConfig(steps=args.steps, horizon=args.horizon, history=args.history,
                             guidance=args.guidance, seed=args.seed)
        bundle, losses = train(args.data, cfg, epochs=args.epochs, log_every=10)
        save_checkpoint(bundle, args.out)
        print(f"wrote {args.out} (final loss {losses[-1]:.4f})")
        return 0
    if args.command == "serve":
        from .serve import BridgeServer

        bundle = load_checkpoint(args.ckpt)
        server = BridgeServer(bundle, host=args.host, port=args.port,
                              target_return=args.target_return, seed=args.seed)
        print(f"serving on {server.endpoint}", flush=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            server.stop()
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
