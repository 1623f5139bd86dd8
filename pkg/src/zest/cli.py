"""Command-line entry points.

Every pipeline config key can come from a flat key=value config file
(--config) or from the same-named flag; flags win. Output goes under
--out, or the ZEST_OUT environment variable, or ./zest_out. Exit codes:
0 success, 2 validation error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields, replace

from .errors import StageError, ValidationError, ZestError
from .pipeline import (
    Pipeline,
    PipelineConfig,
    build_config,
    grid_search,
    parse_config_file,
    sweep_captions,
)

_STAGE_OF_COMMAND = {
    "prep": "prep",
    "cluster": "similarity",
    "summarize": "vrs",
    "train": "model",
    "eval": "eval",
    "nns": "nns",
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--force", action="store_true", help="recompute cached stages")
    for f in fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name in ("category_as_cluster", "gzsl", "nns_centroids"):
            parser.add_argument(flag, dest=f.name, default=None, choices=["true", "false"])
        else:
            parser.add_argument(flag, dest=f.name, default=None)


def _collect_overrides(args) -> dict:
    from .pipeline import _coerce

    overrides = {}
    for f in fields(PipelineConfig):
        raw = getattr(args, f.name, None)
        if raw is not None:
            overrides[f.name] = _coerce(f.name, raw) if isinstance(raw, str) else raw
    return overrides


def _config_from_args(args) -> PipelineConfig:
    file_values = parse_config_file(args.config) if args.config else {}
    return build_config(file_values, _collect_overrides(args))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zest",
        description="Zero-shot image classification from class documents.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for command, help_text in [
        ("prep", "load the corpus, build the split, dump split.tsv"),
        ("cluster", "cluster class documents and report the similarity gate"),
        ("summarize", "extract visually relevant summaries"),
        ("train", "train the bilinear compatibility model"),
        ("eval", "run the full pipeline and write report.json"),
        ("nns", "nearest-neighbor similarity baseline"),
    ]:
        p = sub.add_parser(command, help=help_text)
        _add_config_flags(p)

    p = sub.add_parser("sweep-captions", help="accuracy per caption-bank size")
    _add_config_flags(p)
    p.add_argument("--max-captions", type=int, default=10)

    p = sub.add_parser("grid", help="grid search on the validation split")
    _add_config_flags(p)
    p.add_argument(
        "--grid",
        action="append",
        default=[],
        metavar="KEY=V1,V2,...",
        help="repeatable; e.g. --grid eps=0.05,0.1,0.2",
    )
    return parser


def _run_upto(config: PipelineConfig, command: str, force: bool) -> dict:
    pipe = Pipeline(config)
    wanted = _STAGE_OF_COMMAND[command]
    if wanted in ("eval", "nns", "model"):
        if wanted == "nns" and config.variant != "nns":
            raise ValidationError("the nns subcommand needs variant=nns")
        return pipe.run(force=force)
    # partial runs: execute only the stages the command needs
    prep_key, prep = pipe._stage_prep(force)
    corpus, split = prep["corpus"], prep["split"]
    if wanted == "prep":
        pipe._write_manifest()
        return {"stage": "prep", "seen": len(split.seen_class_ids),
                "unseen": len(split.unseen_class_ids)}
    text_key, text = pipe._stage_textproc(prep_key, corpus, force)
    if wanted == "vrs":
        _, payload = pipe._stage_vrs(text_key, corpus, force)
        pipe._write_manifest()
        return {"stage": "vrs", "vrs_prf": payload["prf"]}
    _, payload = pipe._stage_similarity(
        text_key, prep_key, corpus, split, text["doc_vecs"], force
    )
    pipe._write_manifest()
    return {
        "stage": "similarity",
        "similarity_active": payload["active"],
        "num_clusters": [a.num_clusters for a in payload["assignments"]],
    }


def _parse_grid_args(raw_items) -> dict:
    from .pipeline import _coerce

    grid = {}
    for item in raw_items:
        if "=" not in item:
            raise ValidationError(f"--grid expects KEY=V1,V2,... got {item!r}")
        key, _, values = item.partition("=")
        grid[key] = [_coerce(key, v) for v in values.split(",") if v != ""]
    return grid


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config_from_args(args)
        if args.command == "sweep-captions":
            rows = sweep_captions(config, args.max_captions)
            print(json.dumps({"sweep": rows}, sort_keys=True))
        elif args.command == "grid":
            grid = _parse_grid_args(args.grid)
            best_cfg, results = grid_search(config, grid)
            print(json.dumps(
                {"best": {k: v for k, v in results[_best_index(results)][0].items()},
                 "results": [[r[0], r[1]] for r in results]},
                sort_keys=True,
            ))
        else:
            if args.command == "nns":
                config = replace(config, variant="nns")
            result = _run_upto(config, args.command, args.force)
            print(json.dumps(result, sort_keys=True))
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        if isinstance(exc.__cause__, ValidationError):
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ZestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


def _best_index(results) -> int:
    best, best_acc = 0, results[0][1]
    for i, (_, acc) in enumerate(results):
        if acc > best_acc:
            best, best_acc = i, acc
    return best


if __name__ == "__main__":
    sys.exit(main())
