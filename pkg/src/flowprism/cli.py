"""Command-line front end.

Exit codes: 0 success, 1 runtime error, 2 configuration or usage error.
A JSON summary goes to stdout; logs and diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path

from . import __version__
from .capture import CaptureError
from .config import ConfigError, RuntimeConfig, load_config

log = logging.getLogger("flowprism")

CONFIG_ENV = "FLOWPRISM_CONFIG"
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--out-dir", default=default,
                   help="output directory (overrides System.OutputDirectory)")
    p.add_argument("--log-level", default=argparse.SUPPRESS if suppress else "WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"], type=str.upper,
                   help="stderr log level (default WARNING)")


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=os.environ.get(CONFIG_ENV),
                   help=f"JSON config file (default: ${CONFIG_ENV})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowprism", description="Per-flow feature extraction and feature cost profiling.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("run", help="capture live traffic from an interface",
                       description="Capture from a network interface until SIGINT/SIGTERM or --duration.")
    _add_config(p)
    p.add_argument("--iface", help="capture interface (overrides System.Interface)")
    p.add_argument("--duration", type=float, help="stop after this many seconds")
    p.add_argument("--dump-service-map", action="store_true", help="write the final service map as JSON")
    _add_globals(p, suppress=True)

    p = sub.add_parser("replay", help="process a pcap/pcapng file on virtual time",
                       description="Replay a capture file; emit boundaries follow packet timestamps.")
    _add_config(p)
    p.add_argument("--pcap", help="capture file (overrides System.Pcap)")
    p.add_argument("--dump-service-map", action="store_true", help="write the final service map as JSON")
    _add_globals(p, suppress=True)

    p = sub.add_parser("profile", help="measure state, processing and storage cost per feature class",
                       description="Run the pipeline with cost observation and write a JSON report.")
    _add_config(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--pcap", help="replay this capture file")
    src.add_argument("--iface", help="profile live traffic from this interface")
    p.add_argument("--duration", type=float, help="live profiling duration in seconds")
    p.add_argument("--classes", help="comma-separated feature classes, applied to every service")
    p.add_argument("--report", help="report path (default: <out-dir>/profile.json)")
    p.add_argument("--reservoir", type=int, default=65_536, help="median reservoir size (default 65536)")
    p.add_argument("--seed", type=int, default=0, help="reservoir seed")
    _add_globals(p, suppress=True)

    p = sub.add_parser("bench-cache", help="flow cache insert vs update microbenchmark",
                       description="Time inserts of distinct flows and random updates of existing ones.")
    p.add_argument("--flows", type=int, default=100_000)
    p.add_argument("--updates", type=int, default=1_000_000)
    p.add_argument("--partitions", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    _add_globals(p, suppress=True)

    p = sub.add_parser("report", help="render a profile report as tables or plots",
                       description="Write a TSV table (and with --format plots, series TSV and PNG figures).")
    p.add_argument("--in", dest="input", required=True, help="profile report JSON")
    p.add_argument("--format", choices=["table", "plots"], default="table")
    p.add_argument("--compare", help="second report to diff against (same config hash required)")
    _add_config(p)
    _add_globals(p, suppress=True)
    return parser


def split_classes(text: str) -> list[str]:
    """Split a class list on commas that are not inside parentheses."""
    return [c.strip() for c in re.split(r",(?![^()]*\))", text) if c.strip()]


def _load(args) -> RuntimeConfig:
    if not args.config:
        raise ConfigError(f"no config given (use --config or set {CONFIG_ENV})")
    try:
        return load_config(args.config)
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc.strerror or exc}") from None


def _out_dir(args, cfg: RuntimeConfig | None = None) -> Path:
    if args.out_dir:
        return Path(args.out_dir)
    return Path(cfg.output_directory if cfg else "out")


def _emit(summary: dict) -> None:
    json.dump(summary, sys.stdout, indent=2, sort_keys=False, default=str)
    sys.stdout.write("\n")
    sys.stdout.flush()


def _dump_map(engine, out: Path) -> str:
    path = out / "service_map.json"
    path.write_text(engine.service_map.to_json())
    return str(path)


def cmd_replay(args) -> int:
    from .pipeline import run_replay
    cfg = _load(args)
    pcap = args.pcap or cfg.capture_pcap
    if pcap is None:
        raise ConfigError("replay needs --pcap or System.Pcap")
    cfg = cfg.with_capture(pcap=pcap)
    out = _out_dir(args, cfg)
    result = run_replay(cfg, out)
    summary = {"command": "replay", "config_hash": cfg.config_hash(), **result.summary()}
    if args.dump_service_map:
        summary["service_map"] = _dump_map(result.engine, out)
    _emit(summary)
    return EXIT_OK


def cmd_run(args) -> int:
    from .pipeline import run_live
    cfg = _load(args)
    iface = args.iface or cfg.capture_interface
    if iface is None:
        raise ConfigError("run needs --iface or System.Interface")
    cfg = cfg.with_capture(interface=iface)
    out = _out_dir(args, cfg)
    result = run_live(cfg, output_directory=out, duration=args.duration)
    summary = {"command": "run", "config_hash": cfg.config_hash(), **result.summary()}
    if args.dump_service_map:
        summary["service_map"] = _dump_map(result.engine, out)
    _emit(summary)
    return EXIT_OK


def cmd_profile(args) -> int:
    from .profiler import profile_run, with_classes
    cfg = _load(args)
    classes = split_classes(args.classes) if args.classes else None
    if classes:
        with_classes(cfg, classes)  # validate before touching any capture
    if args.iface or (not args.pcap and cfg.capture_interface):
        iface = args.iface or cfg.capture_interface
        if args.duration is None:
            raise ConfigError("live profiling needs --duration")
        cfg, mode = cfg.with_capture(interface=iface), "live"
    else:
        pcap = args.pcap or cfg.capture_pcap
        if pcap is None:
            raise ConfigError("profile needs --pcap or --iface")
        cfg, mode = cfg.with_capture(pcap=pcap), "replay"
    out = _out_dir(args, cfg)
    report = profile_run(cfg, mode=mode, duration=args.duration, classes=classes,
                         output_directory=out / "emit", reservoir=args.reservoir, seed=args.seed)
    path = Path(args.report) if args.report else out / "profile.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2))
    medians = {name: (e.get("add_packet_ns") or {}).get("median") for name, e in report["classes"].items()}
    _emit({"command": "profile", "report": str(path), "config_hash": report["metadata"]["config_hash"],
           "median_add_packet_ns": medians, "warnings": report["metadata"]["warnings"]})
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import bench_cache
    if args.flows < 1 or args.updates < 0 or args.partitions < 1:
        raise ConfigError("--flows and --partitions must be >= 1, --updates >= 0")
    result = bench_cache(args.flows, args.updates, args.partitions, args.seed)
    _emit({"command": "bench-cache", **result})
    return EXIT_OK


def cmd_report(args) -> int:
    from .profiler import check_config, compare_reports, load_report
    from .report import TABLE_COLUMNS, table_rows, write_report_files
    report = load_report(args.input)
    summary: dict = {"command": "report", "input": args.input}
    if args.config:
        check_config(report, _load(args))
    if args.compare:
        summary["comparison"] = compare_reports(report, load_report(args.compare))
    out = _out_dir(args)
    summary.update(write_report_files(report, out, args.format))
    summary["rows"] = [dict(zip(TABLE_COLUMNS, r)) for r in table_rows(report)]
    _emit(summary)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "replay": cmd_replay, "profile": cmd_profile,
            "bench-cache": cmd_bench, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG
    logging.basicConfig(level=getattr(logging, args.log_level, logging.WARNING), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"flowprism: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CaptureError, OSError, ValueError, RuntimeError) as exc:
        print(f"flowprism: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        print("flowprism: interrupted", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
