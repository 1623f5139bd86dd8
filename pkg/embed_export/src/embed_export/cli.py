"""embed-export command line interface."""

from __future__ import annotations

import argparse
import json
import sys

from .export import ExportError, export_embeddings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Write sentence/caption embeddings (.evec) for a corpus.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="embed documents and captions")
    p.add_argument("--corpus", required=True, help="corpus root directory")
    p.add_argument("--mode", choices=["pretrained", "hash"], default="hash")
    p.add_argument("--dim", type=int, default=64, help="embedding dim (hash mode)")
    p.add_argument("--out", required=True, help="output .evec path")
    p.add_argument("--seed", type=int, default=0, help="hash-mode seed")
    p.add_argument("--captions-per-image", type=int, default=None)
    p.add_argument("--model", default="all-MiniLM-L6-v2", help="pretrained encoder name")
    p.add_argument("--batch-size", type=int, default=32)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        summary = export_embeddings(
            args.corpus,
            args.mode,
            args.out,
            dim=args.dim,
            seed=args.seed,
            captions_per_image=args.captions_per_image,
            model_name=args.model,
            batch_size=args.batch_size,
        )
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
