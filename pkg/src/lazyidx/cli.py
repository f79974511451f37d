"""
Command line interface::

    lazyidx gen-synthetic --rows 1000000 --seed 1 -o synthetic.txt.gz
    lazyidx gen-uservisits --rows 500000 -o uservisits.txt.gz
    lazyidx upload -c cluster.yaml -d synthetic.txt.gz -r root --index-attributes a b c
    lazyidx run -r root -j jobs.yaml -o report
    lazyidx report report.json
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import TYPE_CHECKING

from lazyidx.cluster import Cluster, ClusterConfig
from lazyidx.datagen import gen_synthetic, gen_uservisits_like, load_dataset, write_dataset
from lazyidx.engine import REPORT_COLUMNS, Engine, JobFailedError, load_jobs, load_report, write_report
from lazyidx.logging import add_loglevel_argument, configure_logging
from lazyidx.pprint import pprint_rows

if TYPE_CHECKING:
    from typing import Sequence

logger = logging.getLogger(__name__)


def _cmd_gen_synthetic(args: argparse.Namespace) -> int:
    schema, columns = gen_synthetic(args.rows, args.seed)
    write_dataset(args.out, schema, columns)
    return 0


def _cmd_gen_uservisits(args: argparse.Namespace) -> int:
    schema, columns = gen_uservisits_like(args.rows, args.seed)
    write_dataset(args.out, schema, columns)
    return 0


def _cmd_upload(args: argparse.Namespace) -> int:
    config = ClusterConfig.from_file(args.config, storage_root=args.root)
    schema, columns = load_dataset(args.dataset)
    with Cluster(config) as cluster:
        registry = cluster.upload_dataset(columns, schema, args.index_attributes)
        print(f"Uploaded {len(registry)} blocks to {config.nodes} nodes under {config.storage_root}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    jobs = load_jobs(args.jobs)
    plan_out = None
    if args.plan_dump == "-":
        plan_out = sys.stdout
    elif args.plan_dump:
        plan_out = open(args.plan_dump, "w", encoding="utf-8")
    try:
        with Cluster.open(args.root) as cluster:
            engine = Engine(cluster, progress=args.progress, plan_out=plan_out)
            try:
                rows = engine.run_workload(jobs)
            except JobFailedError as exc:
                csv_path, _ = write_report(exc.rows, args.out)
                logger.error(str(exc))
                print(f"Job failed: {exc}. Partial report written to {csv_path}", file=sys.stderr)
                return 1
    finally:
        if plan_out not in (None, sys.stdout):
            plan_out.close()
    csv_path, json_path = write_report(rows, args.out)
    pprint_rows([r.as_row() for r in rows], REPORT_COLUMNS, out=sys.stdout)
    print(f"Report written to {csv_path} and {json_path}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    rows = load_report(args.report)
    pprint_rows([r.as_row() for r in rows], args.columns or REPORT_COLUMNS, out=sys.stdout)
    return 0


def get_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lazyidx",
        description="Adaptive, incremental block-level indexing on a simulated MapReduce cluster.",
    )
    add_loglevel_argument(parser)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-synthetic", help="Generate the six-attribute synthetic dataset.")
    p.add_argument("--rows", type=int, required=True, help="Number of records.")
    p.add_argument("--seed", type=int, default=0, help="Random seed (default 0).")
    p.add_argument("-o", "--out", required=True, help="Dataset file (.gz/.bz2/.xz compressed if so named).")
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("gen-uservisits", help="Generate the nine-attribute web-log dataset.")
    p.add_argument("--rows", type=int, required=True, help="Number of records.")
    p.add_argument("--seed", type=int, default=0, help="Random seed (default 0).")
    p.add_argument("-o", "--out", required=True, help="Dataset file.")
    p.set_defaults(func=_cmd_gen_uservisits)

    p = sub.add_parser("upload", help="Split a dataset into blocks and place its replicas.")
    p.add_argument("-c", "--config", required=True, help="Cluster config (YAML or JSON).")
    p.add_argument("-d", "--dataset", required=True, help="Dataset file.")
    p.add_argument("-r", "--root", required=True, help="Cluster root directory.")
    p.add_argument(
        "--index-attributes",
        nargs="*",
        default=[],
        help="Attributes to sort and index replica k on at upload time (at most the replication factor).",
    )
    p.set_defaults(func=_cmd_upload)

    p = sub.add_parser("run", help="Run a sequence of jobs and write a report.")
    p.add_argument("-r", "--root", required=True, help="Cluster root directory.")
    p.add_argument("-j", "--jobs", required=True, help="Jobs file (YAML or JSON).")
    p.add_argument("-o", "--out", default="report", help="Report prefix; writes <out>.csv and <out>.json.")
    p.add_argument("--plan-dump", default=None, help="Dump every job plan to this file ('-' for stdout).")
    p.add_argument("--progress", action="store_true", help="Show progress bars (requires tqdm).")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="Pretty-print a saved JSON report.")
    p.add_argument("report", help="Report JSON file.")
    p.add_argument("--columns", nargs="*", default=None, help="Columns to show.")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = get_parser()
    args = parser.parse_args(argv)
    configure_logging(args.loglevel)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        logger.debug("Command failed", exc_info=True)
        print(f"lazyidx {args.cmd}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
