"""Command line: ``tcmicp register`` and ``tcmicp evaluate``.

Exit codes: 0 success, 1 usage or parse error, 2 alignment failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from collections.abc import Sequence

from .cloudio import CloudFormatError, atomic_write, read_cloud, write_cloud
from .config import ConfigError, RunConfig, load_config
from .evaluation import Degradation, Method, SceneParams, rows_to_csv, run_experiment
from .geometry import GeometryError
from .register import AlignmentFailed, icp_multi, tcm_icp

EXIT_OK, EXIT_USAGE, EXIT_ALIGN = 0, 1, 2

TRANSFORM_HEADER = ("input", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22",
                    "tx", "ty", "tz")
DEFAULT_LEVELS = (0.0, 10.0, 20.0, 30.0)

log = logging.getLogger("tcmicp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; here that code means alignment failure."""

    def error(self, message: str):  # type: ignore[override]
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tcmicp", description="Multi-scan rigid point cloud registration.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("register", help="align scans and write the merged cloud")
    r.add_argument("--inputs", nargs="+", default=None, metavar="FILE",
                   help="two or more .xyz/.ply scans (default: config 'inputs')")
    r.add_argument("--output", default=None, help="merged cloud (.ply: binary PLY, else XYZ)")
    r.add_argument("--transforms", required=True, help="CSV with one 12-value transform per input")
    r.add_argument("--config", help="key = value configuration file")
    r.add_argument("--method", choices=[m.value for m in Method], default=Method.TCM_ICP.value)
    r.add_argument("--seed", type=int, default=None)

    e = sub.add_parser("evaluate", help="run a degradation sweep on synthetic scenes")
    e.add_argument("--method", default=Method.TCM_ICP.value,
                   help="comma list of: " + ", ".join(m.value for m in Method))
    e.add_argument("--kinds", default=",".join(d.value for d in Degradation),
                   help="comma list of: " + ", ".join(d.value for d in Degradation))
    e.add_argument("--levels", default=",".join(f"{x:g}" for x in DEFAULT_LEVELS),
                   help="comma list of percentages")
    e.add_argument("--scans", type=int, default=2, help="scans per scene")
    e.add_argument("--points", type=int, default=SceneParams.points_per_scan, help="points per scan")
    e.add_argument("--max-rotation", type=float, default=SceneParams.max_rotation_deg,
                   help="degrees")
    e.add_argument("--max-translation", type=float, default=SceneParams.max_translation_frac,
                   help="fraction of the scene diagonal")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--repeats", type=int, default=1,
                   help="scenes per level (seeds seed .. seed+repeats-1), metrics averaged")
    e.add_argument("--config", help="key = value configuration file")
    e.add_argument("--timing", action="store_true",
                   help="record wall time (off by default so output is byte-reproducible)")
    e.add_argument("--out", required=True, help="CSV output path")
    return p


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _run_config(path: str | None, seed: int | None) -> RunConfig:
    cfg = load_config(path) if path else RunConfig()
    return cfg.with_seed(seed) if seed is not None else cfg


def transforms_csv(rows: Sequence[tuple[str, list[float]]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRANSFORM_HEADER)
    for name, values in rows:
        w.writerow([name, *(f"{v:.17g}" for v in values)])
    return buf.getvalue()


def cmd_register(args: argparse.Namespace) -> int:
    cfg = _run_config(args.config, args.seed)
    inputs = list(args.inputs) if args.inputs else list(cfg.inputs)
    output = args.output or cfg.output
    if len(inputs) < 2:
        raise UsageError("register needs at least two --inputs")
    if not output:
        raise UsageError("register needs --output (or 'output' in the config)")
    clouds = [read_cloud(path) for path in inputs]
    try:
        if args.method == Method.TCM_ICP.value:
            result = tcm_icp(clouds, cfg.register, cfg.preprocess, cfg.graph_threshold)
        else:
            result = icp_multi(clouds, cfg.register, cfg.graph_threshold)
    except AlignmentFailed as exc:
        print(f"tcmicp: {exc}", file=sys.stderr)
        return EXIT_ALIGN
    write_cloud(result.merged, output)
    rows = [(path, t.as_row()) for path, (_, t) in zip(inputs, result.transforms)]
    atomic_write(args.transforms, transforms_csv(rows).encode())
    log.info("reference %s, merge order %s", inputs[result.reference],
             [inputs[i] for i in result.order])
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _run_config(args.config, args.seed)
    try:
        methods = [Method(m) for m in _split(args.method)]
        kinds = [Degradation(k) for k in _split(args.kinds)]
        levels = [float(x) for x in _split(args.levels)]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not methods:
        raise UsageError("--method is empty")
    if any(not 0 <= x <= 100 for x in levels):
        raise UsageError("levels must lie in [0, 100]")
    if args.scans < 2 or args.points < 3 or args.repeats < 1:
        raise UsageError("need --scans >= 2, --points >= 3 and --repeats >= 1")
    scene = SceneParams(args.scans, args.points, args.max_rotation, args.max_translation)
    seeds = list(range(args.seed, args.seed + args.repeats))
    rows = []
    for method in methods:
        rows += run_experiment(method, scene, kinds, levels, seeds, cfg.register, cfg.preprocess,
                               cfg.metric_cap, args.timing, cfg.graph_threshold)
    atomic_write(args.out, rows_to_csv(rows).encode())
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
            format="%(levelname)s %(name)s: %(message)s",
        )
        if args.command == "register":
            return cmd_register(args)
        if args.command == "evaluate":
            return cmd_evaluate(args)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"tcmicp: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CloudFormatError, ConfigError, GeometryError, OSError) as exc:
        print(f"tcmicp: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
