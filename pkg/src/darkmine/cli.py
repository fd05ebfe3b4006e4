"""Command line entrypoint: one subcommand per pipeline stage.

Exit codes: 0 success, 1 operational error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import MiningError
from .pipeline import AGGREGATES, RunConfig


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="darkmine",
        description="Marketplace mining pipeline: simulate, crawl, harvest, "
        "parse, index, analyze, serve.",
    )
    parser.add_argument("--config", help="JSON run configuration file")
    parser.add_argument("--market", help="market id override")
    parser.add_argument("--seed", type=int, help="simulator seed override")
    parser.add_argument("--inbox", help="inbox directory override")
    parser.add_argument("--outbox", help="outbox directory override")
    parser.add_argument("--data-dir", help="index data directory override")
    parser.add_argument("--endpoint", help="endpoint override (sim base url or API host:port)")
    parser.add_argument("-v", "--verbose", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("sim", help="generate and serve the synthetic market")
    sim.add_argument("--export", help="directory for ground truth, sitemap, profile")
    sim.add_argument(
        "--export-only",
        action="store_true",
        help="write exports and exit without serving",
    )

    sub.add_parser("crawl", help="discover and liveness-probe market URLs")
    sub.add_parser("harvest", help="fetch active listing pages into the inbox")
    sub.add_parser("parse", help="extract inbox HTML into outbox records")
    sub.add_parser("index", help="load outbox records into the search corpus")

    analyze = sub.add_parser("analyze", help="compute one aggregate, write table+figure")
    analyze.add_argument("aggregate", choices=AGGREGATES)
    analyze.add_argument("-n", type=int, default=5, help="ranking length")
    analyze.add_argument("--top-k", type=int, default=5, help="heatmap row count")
    analyze.add_argument("--class", dest="product_class", help="restrict to one product class")
    analyze.add_argument("--country", help="country for origin-range")
    analyze.add_argument("--seller", help="seller for seller-share")
    analyze.add_argument("--out", help="output directory for table and figure")

    serve = sub.add_parser("serve", help="run the REST API")
    serve.add_argument("--ui-dir", help="static analyst UI bundle to mount at /ui")

    return parser


def _load_config(args: argparse.Namespace) -> RunConfig:
    overrides: dict = {}
    if args.market:
        overrides["market_id"] = args.market
    if args.inbox:
        overrides["inbox"] = args.inbox
    if args.outbox:
        overrides["outbox"] = args.outbox
    if args.data_dir:
        overrides["data_dir"] = args.data_dir
    if args.endpoint:
        if args.command == "serve":
            overrides["api_endpoint"] = args.endpoint
        else:
            overrides["base_url"] = args.endpoint
    if args.config:
        cfg = RunConfig.from_file(args.config, overrides)
    else:
        cfg = RunConfig.from_dict(overrides)
    if args.seed is not None:
        cfg.sim = {**cfg.sim, "seed": args.seed}
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    from . import pipeline

    try:
        cfg = _load_config(args)
        if args.command == "sim":
            pipeline.run_sim(cfg, export_dir=args.export, block=not args.export_only)
        elif args.command == "crawl":
            pipeline.run_crawl(cfg)
        elif args.command == "harvest":
            counts = pipeline.run_harvest(cfg)
            if counts.captcha_stops:
                print(
                    f"stopped on a challenge after saving {counts.saved} pages; "
                    "renew the session token and re-run harvest to resume",
                    file=sys.stderr,
                )
                return 1
        elif args.command == "parse":
            stats = pipeline.run_parse(cfg)
            print(f"parsed={stats.parsed} failed={stats.failed} deleted={stats.deleted}")
        elif args.command == "index":
            name = pipeline.run_index(cfg)
            print(name)
        elif args.command == "analyze":
            tsv = pipeline.run_analyze(
                cfg,
                args.aggregate,
                n=args.n,
                top_k=args.top_k,
                product_class=args.product_class,
                country=args.country,
                seller=args.seller,
                out_dir=args.out,
            )
            print(tsv)
            print(tsv.read_text(encoding="utf-8"), end="")
        elif args.command == "serve":
            pipeline.run_serve(cfg, ui_dir=args.ui_dir)
    except MiningError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
