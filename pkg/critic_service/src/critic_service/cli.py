"""Command line for training and serving the critic."""

from __future__ import annotations

import argparse
import sys

from .data import ImageResolver
from .errors import CriticServiceError
from .serve import CriticServer
from .train import TrainerConfig, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="critic-service")
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="fine-tune adapters on a critic task")
    tr.add_argument("--task", choices=["classifier", "lister"], required=True)
    tr.add_argument("--data", required=True, help="training JSONL")
    tr.add_argument("--val", help="validation JSONL")
    tr.add_argument("--records", help="records file mapping image ids to uris")
    tr.add_argument("--images-dir", help="directory of image files named by id")
    tr.add_argument("--out", required=True, help="checkpoint output directory")
    tr.add_argument("--epochs", type=int, default=25)
    tr.add_argument("--batch-size", type=int, default=16)
    tr.add_argument("--lr", type=float, default=5e-5)
    tr.add_argument("--max-output-tokens", type=int, default=350)
    tr.add_argument("--lora-rank", type=int, default=16)
    tr.add_argument("--lora-alpha", type=int, default=32)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--base-model", default="tiny-bytelm")

    sv = sub.add_parser("serve", help="serve checkpoints over the critic protocol")
    sv.add_argument("--classifier", help="classifier checkpoint directory")
    sv.add_argument("--lister", help="lister checkpoint directory")
    sv.add_argument("--port", type=int, required=True)
    sv.add_argument("--host", default="127.0.0.1")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "train":
            config = TrainerConfig(
                task=args.task,
                epochs=args.epochs,
                batch_size=args.batch_size,
                learning_rate=args.lr,
                max_output_tokens=args.max_output_tokens,
                lora_rank=args.lora_rank,
                lora_alpha=args.lora_alpha,
                seed=args.seed,
                base_model=args.base_model,
            )
            resolver = ImageResolver(records_file=args.records, images_dir=args.images_dir)
            run = train(config, args.data, resolver, val_path=args.val, out_dir=args.out)
            print(
                f"trained {config.task}: loss {run.train_losses[0]:.4f} -> "
                f"{run.train_losses[-1]:.4f} over {config.epochs} epochs; "
                f"checkpoint at {run.checkpoint}"
            )
            return 0
        if args.command == "serve":
            if not args.classifier and not args.lister:
                print("error: need --classifier and/or --lister", file=sys.stderr)
                return 2
            server = CriticServer(
                classifier_dir=args.classifier,
                lister_dir=args.lister,
                host=args.host,
                port=args.port,
            )
            print(f"critic serving on {server.endpoint}", flush=True)
            try:
                server.serve_forever()
            except KeyboardInterrupt:
                server.stop()
            return 0
        return 2
    except CriticServiceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
