"""Command-line entry point for the encoder bridge.

Subcommands:
    export  encode a taxonomy and corpus into pipeline-ready embedding files

Failures print one ``error: ...`` line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .encode import EncodeError
from .export import export_dataset
from .render import TEMPLATES
from .wiki import GlossError


def cmd_export(args: argparse.Namespace) -> int:
    try:
        paths = export_dataset(
            taxonomy=args.taxonomy,
            corpus=args.corpus,
            out_dir=args.output_dir,
            dataset=args.dataset,
            template_id=args.template,
            with_gloss=args.with_gloss,
            encoder=args.encoder,
            offline=args.offline,
            cache_dir=args.cache_dir,
        )
    except (OSError, ValueError, EncodeError, GlossError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for key in ("passages", "prototypes", "prototypes_no_gloss"):
        print(f"{key}: {paths[key]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="c2fb", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    export = sub.add_parser("export", help="encode a taxonomy and corpus into embedding files")
    export.add_argument("--taxonomy", required=True, help="coarse<TAB>fine[<TAB>gloss] records")
    export.add_argument("--corpus", required=True, help="id<TAB>coarse<TAB>text[<TAB>gold] records")
    export.add_argument("--output-dir", required=True)
    export.add_argument("--dataset", choices=sorted(TEMPLATES), default="nyt")
    export.add_argument("--template", type=int, choices=(1, 2, 3), default=1)
    gloss = export.add_mutually_exclusive_group()
    gloss.add_argument("--with-gloss", dest="with_gloss", action="store_true", default=True)
    gloss.add_argument("--no-gloss", dest="with_gloss", action="store_false")
    export.add_argument("--encoder", default="hashed", help="'hashed' or 'hf:<model-name>'")
    export.add_argument("--offline", action="store_true", help="serve glosses from cache only")
    export.add_argument("--cache-dir", default=None)
    export.set_defaults(handler=cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
