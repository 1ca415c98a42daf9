"""Command-line entry point: ``icmprecycle analyze|loops|churn``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import re
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from ipaddress import IPv4Address, IPv4Network
from pathlib import Path

from . import __version__
from .asmap import load_table
from .attribution import load_registry
from .churn import compare_epochs, load_epoch
from .errors import FileUnreadable, IcmpRecycleError, TransportFailure
from .ingest import CaptureFilter, read_capture
from .loopdet import (
    DEFAULT_DEGREE_THRESHOLD,
    ProbeConfig,
    find_loop,
    persistence_check,
    run_traceroutes,
    schedule_seeds,
)
from .netsim import Simulator, ground_truth, load_topology
from .pipeline import AnalysisContext, analyze_messages

log = logging.getLogger("icmprecycle")

MANIFEST = "manifest.json"
TOP_K = 8


@dataclass
class RunManifest:
    command: str
    config: dict[str, str]
    inputs: dict[str, dict]
    started_at: str
    tool_version: str = __version__
    finished_at: str | None = None
    outputs: list[str] = field(default_factory=list)

    def to_json(self):
        return {
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "tool_version": self.tool_version,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "outputs": self.outputs,
        }


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 20), b""):
                h.update(block)
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc
    return h.hexdigest()


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _jsonl(docs) -> str:
    return "".join(json.dumps(d, sort_keys=True) + "\n" for d in docs)


def write_reports(out_dir, files: dict[str, str], manifest: RunManifest):
    """Write every report, then rename them all into place.

    Nothing becomes visible in ``out_dir`` until all temporary files are
    complete, so a failure leaves no partial report behind.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest.outputs = sorted(files)
    manifest.finished_at = _utcnow()
    files = dict(files, **{MANIFEST: _dumps(manifest.to_json())})
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out)
            staged.append((tmp, out / name))
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        for tmp, final in staged:
            os.replace(tmp, final)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def _with_manifest(doc: dict) -> dict:
    return {"manifest": MANIFEST, **doc}


# --- analyze -------------------------------------------------------------------------


def cmd_analyze(args) -> int:
    manifest = RunManifest(
        "analyze",
        {"campaigns": str(args.campaigns), "astable": str(args.astable)},
        {},
        _utcnow(),
    )
    for name in ("capture", "campaigns", "astable"):
        path = getattr(args, name)
        manifest.inputs[name] = {"path": str(path), "sha256": sha256_file(path)}

    registry = load_registry(args.campaigns)
    table = load_table(args.astable)
    prefixes = args.measurement_prefix or registry.measurement_prefixes
    reader = read_capture(args.capture, CaptureFilter(tuple(IPv4Network(p) for p in prefixes)))
    analysis = analyze_messages(reader, AnalysisContext(registry, table), args.parallelism)

    stats = analysis.stats.to_json()
    stats["capture"] = asdict(reader.counters)
    stats["astable_diagnostics"] = len(table.diagnostics)
    stats["note"] = "identical frames captured more than once are counted as separate messages"
    seeds = sorted(analysis.seeds)
    files = {
        "stats.json": _dumps(_with_manifest(stats)),
        "stats.csv": analysis.stats.to_csv(),
        "campaigns.json": _dumps(_with_manifest(analysis.histogram.to_json(TOP_K))),
        "campaigns.csv": analysis.histogram.to_csv(TOP_K),
        "findings.jsonl": _jsonl(f.to_json() for f in analysis.findings),
        "unreachability.json": _dumps(_with_manifest(analysis.rollup.to_json())),
        "unreachability.csv": analysis.rollup.to_csv(),
        "ttl_categories.json": _dumps(_with_manifest(analysis.ttls.to_json())),
        "ttl_categories.csv": analysis.ttls.to_csv(),
        "seeds.csv": seeds_csv(seeds),
    }
    write_reports(args.out, files, manifest)
    log.info("analyzed %d messages into %s", analysis.stats.total, args.out)
    return 0


def seeds_csv(seeds) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["capture_time", "destination"])
    for when, dst in seeds:
        w.writerow([when.isoformat(), dst])
    return buf.getvalue()


def _parse_time(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        when = datetime.fromisoformat(text)
        if when.tzinfo is None:
            when = when.replace(tzinfo=timezone.utc)
        return when.timestamp()


def load_seed_events(path) -> list[tuple[float, IPv4Address]]:
    """Read ``capture_time,destination`` rows; times are epoch seconds or ISO 8601."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(f"cannot read seeds {path}: {exc}") from exc
    events = []
    reader = csv.reader(io.StringIO(text))
    for lineno, row in enumerate(reader, 1):
        if not row or row[0].startswith("#") or (lineno == 1 and row[0] == "capture_time"):
            continue
        try:
            events.append((_parse_time(row[0].strip()), IPv4Address(row[1].strip())))
        except (ValueError, IndexError):
            raise FileUnreadable(f"{path}:{lineno}: bad seed row {row!r}") from None
    return events


# --- loops ---------------------------------------------------------------------------


_DURATION = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([smhdw]?)\s*$")
_UNITS = {"": 1, "s": 1, "m": 60, "h": 3600, "d": 86400, "w": 604800}


def parse_duration(text: str) -> float:
    m = _DURATION.match(text)
    if not m:
        raise argparse.ArgumentTypeError(f"bad duration {text!r} (e.g. 90, 30m, 14d)")
    return float(m.group(1)) * _UNITS[m.group(2)]


def _seen_ip_pause(text: str) -> int:
    value = int(text)
    if value < 500:
        raise argparse.ArgumentTypeError("--seen-ip-pause-ms must be at least 500")
    return value


def _seed_events(args, manifest) -> list[tuple[float, IPv4Address]]:
    if args.seeds != "from-analysis":
        manifest.inputs["seeds"] = {"path": str(args.seeds), "sha256": sha256_file(args.seeds)}
        return load_seed_events(args.seeds)
    if not args.capture or not args.campaigns:
        raise FileUnreadable("--seeds from-analysis needs --capture and --campaigns")
    for name in ("capture", "campaigns"):
        path = getattr(args, name)
        manifest.inputs[name] = {"path": str(path), "sha256": sha256_file(path)}
    registry = load_registry(args.campaigns)
    reader = read_capture(args.capture, CaptureFilter(registry.measurement_prefixes))
    analysis = analyze_messages(reader, AnalysisContext(registry), 1)
    return [(when.timestamp(), dst) for when, dst in analysis.seeds]


def _transport(args, manifest):
    if args.topology == "live":
        if not args.live or not args.allowlist:
            raise TransportFailure("live probing needs both --live and --allowlist")
        from .live import LiveTransport, load_allowlist

        manifest.inputs["allowlist"] = {"path": str(args.allowlist),
                                        "sha256": sha256_file(args.allowlist)}
        return LiveTransport(load_allowlist(args.allowlist)), None
    if args.live:
        raise TransportFailure("--live requires --topology live")
    manifest.inputs["topology"] = {"path": str(args.topology), "sha256": sha256_file(args.topology)}
    topo = load_topology(args.topology)
    return Simulator(topo), topo


def cmd_loops(args) -> int:
    manifest = RunManifest("loops", {}, {}, _utcnow())
    transport, topo = _transport(args, manifest)
    table = None
    if args.astable:
        manifest.config["astable"] = str(args.astable)
        manifest.inputs["astable"] = {"path": str(args.astable), "sha256": sha256_file(args.astable)}
        table = load_table(args.astable)
    events = sorted(_seed_events(args, manifest), key=lambda e: (e[0], int(e[1])))
    seeds = list(schedule_seeds(events, args.window_min * 60.0))

    cfg = ProbeConfig(
        transport=transport,
        max_ttl=args.max_ttl,
        flow_id=args.flow_id,
        seen_ip_pause=args.seen_ip_pause_ms / 1000.0,
    )
    t0 = seeds[0].seen_at if seeds else 0.0
    base = transport.now()
    jobs = [(base + s.seen_at - t0, s.target) for s in seeds]
    outcomes = run_traceroutes(jobs, cfg, args.parallelism)

    findings = []
    for outcome in outcomes:
        if outcome.path is None:
            continue
        finding = find_loop(outcome.path, table, args.degree_threshold)
        if finding is not None:
            findings.append(finding)

    distinct = {frozenset(l for l in f.members if not l.silent) for f in findings}
    summary = {
        "seed_events": len(events),
        "traceroutes": len(outcomes),
        "failed": sum(1 for o in outcomes if o.error is not None),
        "loops_found": len(findings),
        "distinct_loops": len(distinct),
        "slash24s_affected": len({f.target_slash24 for f in findings}),
        "cross_as": sum(1 for f in findings if f.cross_as),
        "fully_identified": sum(1 for f in findings if f.fully_identified),
    }
    if topo is not None:
        summary["ground_truth"] = _compare_ground_truth(topo, seeds, findings, args.flow_id)

    files = {
        "loops.jsonl": _jsonl(f.to_json() for f in findings),
        "traceroutes.jsonl": _jsonl(
            {"target": str(o.target),
             "hops": [str(h) for h in o.path.hops] if o.path else None,
             "reached": o.path.reached if o.path else False,
             "error": str(o.error) if o.error else None}
            for o in outcomes),
    }
    if args.reprobe_delay is not None:
        table_p = persistence_check(findings, args.reprobe_delay, cfg, table,
                                    args.degree_threshold, args.parallelism)
        files["persistence.json"] = _dumps(_with_manifest(table_p.to_json()))
        summary["persistence"] = {"persisted": table_p.persisted,
                                  "disappeared": table_p.disappeared, "failed": table_p.failed}
    files["loop_summary.json"] = _dumps(_with_manifest(summary))
    write_reports(args.out, files, manifest)
    log.info("%d traceroutes, %d loops", len(outcomes), len(findings))
    return 0


def _compare_ground_truth(topo, seeds, findings, flow_id) -> dict:
    """Loop presence per probed target according to the initial routing tables."""
    looping = set()
    loops = set()
    for s in seeds:
        truth = ground_truth(topo, s.target, flow_id)
        if truth.loop is not None:
            looping.add(s.target)
            loops.add(truth.loop)
    detected = {f.target for f in findings}
    return {
        "looping_targets": len(looping),
        "distinct_loops": len(loops),
        "loops": [list(loop) for loop in sorted(loops)],
        "missed": sorted(str(t) for t in looping - detected),
        "false_positives": sorted(str(t) for t in detected - looping),
        "agrees": looping == detected,
    }


# --- churn ---------------------------------------------------------------------------


def cmd_churn(args) -> int:
    manifest = RunManifest("churn", {}, {}, _utcnow())
    for name in ("epoch_a", "epoch_b"):
        path = getattr(args, name)
        manifest.inputs[name] = {"path": str(path), "sha256": sha256_file(path)}
    table = None
    if args.astable:
        manifest.config["astable"] = str(args.astable)
        manifest.inputs["astable"] = {"path": str(args.astable), "sha256": sha256_file(args.astable)}
        table = load_table(args.astable)
    report = compare_epochs(load_epoch(args.epoch_a), load_epoch(args.epoch_b), table, args.share)
    files = {
        "churn.json": _dumps(_with_manifest(report.to_json())),
        "churn_flows.csv": report.flow_csv(),
    }
    write_reports(args.out, files, manifest)
    return 0


# --- argument parsing ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icmprecycle",
        description="Analyze ICMP responses to scans and hunt for routing loops.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("analyze", help="summarize a capture of ICMP responses", formatter_class=fmt)
    p.add_argument("--capture", required=True, type=Path, help="classic pcap file")
    p.add_argument("--campaigns", required=True, type=Path, help="campaign registry (JSON)")
    p.add_argument("--astable", required=True, type=Path, help="prefix,asn table")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--parallelism", type=int, default=None,
                   help="analysis worker processes; unset uses every hardware thread")
    p.add_argument("--measurement-prefix", action="append", type=IPv4Network,
                   help="override the registry's measurement prefixes (repeatable)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("loops", help="probe seeded targets and report routing loops",
                       formatter_class=fmt)
    p.add_argument("--seeds", required=True,
                   help='seed CSV (capture_time,destination) or "from-analysis"')
    p.add_argument("--topology", required=True,
                   help='simulator topology (JSON) or "live"')
    p.add_argument("--capture", type=Path, help="capture to seed from with --seeds from-analysis")
    p.add_argument("--campaigns", type=Path, help="registry for --seeds from-analysis")
    p.add_argument("--astable", type=Path, help="prefix,asn table for AS-level loop paths")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--parallelism", type=int, default=8, help="concurrent traceroute sessions")
    p.add_argument("--degree-threshold", type=int, default=DEFAULT_DEGREE_THRESHOLD,
                   help="a cycle is a loop when a member's degree exceeds this")
    p.add_argument("--max-ttl", type=int, default=64, help="largest probe TTL")
    p.add_argument("--seen-ip-pause-ms", type=_seen_ip_pause, default=500,
                   help="probe gap after the first repeated responder (min 500)")
    p.add_argument("--window-min", type=float, default=30.0,
                   help="per-/24 seeding window in minutes")
    p.add_argument("--flow-id", type=int, default=ProbeConfig.flow_id,
                   help="constant flow identifier for all probes")
    p.add_argument("--reprobe-delay", type=parse_duration, default=None,
                   help="re-probe loops after this delay (e.g. 14d) and report persistence")
    p.add_argument("--live", action="store_true",
                   help="acknowledge that probes are sent onto the real network")
    p.add_argument("--allowlist", type=Path, help="prefixes that live probing may target")
    p.set_defaults(func=cmd_loops)

    p = sub.add_parser("churn", help="compare unreachable hosts between two epochs",
                       description="Both epochs must come from scans of the same target list; "
                                   "otherwise flips mix churn with changes in what was probed.",
                       formatter_class=fmt)
    p.add_argument("--epoch-a", required=True, type=Path, help="unreachable hosts, earlier epoch")
    p.add_argument("--epoch-b", required=True, type=Path, help="unreachable hosts, later epoch")
    p.add_argument("--astable", type=Path, help="prefix,asn table for flip concentration")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--share", type=float, default=0.8, help="flip share the AS set must cover")
    p.set_defaults(func=cmd_churn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (IcmpRecycleError, ValueError) as exc:
        print(f"icmprecycle {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
