"""Cost profiling of feature classes: state, processing and storage.

State and storage ride along with a normal pipeline run. State is the sum
of ``approximate_size()`` over every flow holding a class, sampled right
before each interval collection (the peak of that interval) and right after
it. Storage comes from the emit writer's per-class byte meter.

Processing is measured separately: the trace is decoded and classified
once, then every class gets its own single-threaded pass in which only the
``add_packet`` call sits between the two clock reads. Decoding, lookups and
the other classes never share a pass with the class being timed.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import threading
import time
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

from .capture import PcapFileSource
from .categorization import ServiceMap
from .config import RuntimeConfig, build_service
from .features import FeatureRef, registry_lookup
from .flowcache import FlowCache
from .output import NS, StorageMeter, encode_record
from .packet import LocalNetworks, flow_key
from .pipeline import RunCounters, _reordered, decode_and_ingest, run_live, run_replay
from .stats import DEFAULT_RESERVOIR, StreamingStats

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SHORT_FLOW_MAX = 5
LONG_FLOW_MIN = 100
CDF_POINTS = 101
TIMING_KEYS = ("add_packet_ns", "add_packet_by_flow_length", "add_packet_cdf_ns")


class ReportMismatchError(ValueError):
    """Two reports (or a report and a config) describe different plans."""


def profile_state(records: Iterable) -> dict[str, int]:
    """Per-class byte totals over a snapshot of flow records."""
    totals: dict[str, int] = defaultdict(int)
    for rec in records:
        for name, st in zip(rec.feature_names, rec.feature_states):
            totals[name] += st.approximate_size()
    return dict(totals)


class StateObserver:
    """Receives sizes from the engine at collection time (thread-safe)."""

    def __init__(self):
        self._lock = threading.Lock()
        # (service, class) -> cycle -> bytes
        self.before: dict[tuple[str, str], dict[int, int]] = defaultdict(lambda: defaultdict(int))
        self.after: dict[tuple[str, str], dict[int, int]] = defaultdict(lambda: defaultdict(int))

    def on_state(self, service: str, cycle: int, feature: str, before: int, after: int, final: bool) -> None:
        if final:
            return
        with self._lock:
            self.before[(service, feature)][cycle] += before
            self.after[(service, feature)][cycle] += after


def with_classes(cfg: RuntimeConfig, classes: Sequence[str]) -> RuntimeConfig:
    """Copy of ``cfg`` where every service collects exactly ``classes``."""
    services = tuple(build_service(s.name, s.domains, s.prefixes, classes, s.emit_interval)
                     for s in cfg.service_classes)
    return dataclasses.replace(cfg, service_classes=services)


def _series(per_cycle: dict[int, int], n: int) -> list[int]:
    return [per_cycle.get(i, 0) for i in range(n)]


def _class_services(cfg: RuntimeConfig) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for s in cfg.service_classes:
        for name in s.collect:
            out.setdefault(name, []).append(s.name)
    return out


# -- processing --------------------------------------------------------------

def _timer_info() -> dict:
    info = time.get_clock_info("perf_counter")
    perf = time.perf_counter_ns
    samples = StreamingStats(capacity=4096)
    noop = _noop
    for _ in range(4096):
        t0 = perf()
        noop(None)
        samples.add(perf() - t0)
    return {
        "clock": "perf_counter_ns",
        "resolution_ns": info.resolution * 1e9,
        "monotonic": info.monotonic,
        "calibration_overhead_ns": samples.median,
    }


def _noop(_pkt) -> None:
    return None


@dataclasses.dataclass
class ClassifiedTrace:
    """Decoded packets of bound flows, in capture order."""
    packets: list          # (pkt, key, service index)
    flow_packets: dict     # key -> packet count
    run_start: int | None
    services: tuple


def classify_trace(cfg: RuntimeConfig, records: Iterable) -> ClassifiedTrace:
    """Decode and bind every packet the way the pipeline would, without features."""
    smap = ServiceMap(cfg.service_classes, cfg.dns_ttl_floor)
    cache = FlowCache([() for _ in cfg.service_classes], max_flows=cfg.max_flows,
                      store_unclassified=cfg.store_unclassified)
    local = LocalNetworks(cfg.local_prefixes)
    counters = RunCounters()
    packets = []
    counts: dict = defaultdict(int)
    run_start = None
    now = {"t": 0}

    def classify(key, remote):
        return smap.classify(key, remote, now["t"])

    for ts, frame, wl in _reordered(records, counters):
        if run_start is None:
            run_start = ts
        pkt = decode_and_ingest(frame, ts, wl, local, smap, counters)
        if pkt is None:
            continue
        key = flow_key(pkt)
        now["t"] = ts
        rec = cache.upsert(key, pkt, classify)
        if rec is None or rec.service is None:
            continue
        packets.append((pkt, key, rec.service))
        counts[key] += 1
    return ClassifiedTrace(packets, dict(counts), run_start, cfg.service_classes)


def _time_class(ref: FeatureRef, trace: ClassifiedTrace, holders: set[int], reservoir: int, seed: int) -> dict:
    """One dedicated pass for a class; collect() runs untimed at boundaries."""
    stats = StreamingStats(reservoir, seed)
    short = StreamingStats(reservoir, seed)
    long_ = StreamingStats(reservoir, seed)
    states: dict = {}
    by_service: dict[int, list] = defaultdict(list)
    perf = time.perf_counter_ns
    emit_ns = {i: trace.services[i].emit_interval * NS for i in holders}
    boundary = {i: (trace.run_start or 0) + emit_ns[i] for i in holders}
    counts = trace.flow_packets
    build = ref.build
    for pkt, key, svc in trace.packets:
        if svc not in holders:
            continue
        ts = pkt.timestamp
        if ts >= boundary[svc]:
            while ts >= boundary[svc]:
                slot = emit_ns[svc] / NS
                for st in by_service[svc]:
                    st.collect(slot, False)
                boundary[svc] += emit_ns[svc]
        st = states.get(key)
        if st is None:
            st = states[key] = build()
            by_service[svc].append(st)
        add = st.add_packet
        t0 = perf()
        add(pkt)
        dt = perf() - t0
        stats.add(dt)
        n = counts[key]
        if n <= SHORT_FLOW_MAX:
            short.add(dt)
        elif n >= LONG_FLOW_MIN:
            long_.add(dt)
    summary = stats.summary(cdf_points=CDF_POINTS)
    cdf = summary.pop("cdf")
    return {
        "add_packet_ns": summary,
        "add_packet_cdf_ns": cdf,
        "add_packet_by_flow_length": {
            f"short_le_{SHORT_FLOW_MAX}": short.summary(),
            f"long_ge_{LONG_FLOW_MIN}": long_.summary(),
        },
    }


def profile_processing(cfg: RuntimeConfig, records: Iterable | ClassifiedTrace,
                       classes: Sequence[str] | None = None, reservoir: int = DEFAULT_RESERVOIR,
                       seed: int = 0) -> dict[str, dict]:
    """Per-class add_packet timing statistics, one dedicated pass per class."""
    trace = records if isinstance(records, ClassifiedTrace) else classify_trace(cfg, records)
    holders: dict[str, set[int]] = defaultdict(set)
    refs: dict[str, FeatureRef] = {}
    for i, s in enumerate(cfg.service_classes):
        for ref in s.features:
            holders[ref.text].add(i)
            refs[ref.text] = ref
    names = list(refs) if classes is None else [registry_lookup(c).text for c in classes]
    out = {}
    for name in names:
        if name not in refs:
            out[name] = _time_class(registry_lookup(name), trace, set(), reservoir, seed)
            continue
        out[name] = _time_class(refs[name], trace, holders[name], reservoir, seed)
    return out


# -- storage -----------------------------------------------------------------

def profile_storage(meter: StorageMeter, paths: dict, completed: dict[str, int]) -> dict:
    """Per-class byte series from the meter, checked against the files.

    Every file is re-read and each line re-split into its feature values;
    class bytes plus framing must add up to the bytes on disk exactly.
    """
    per_class: dict[str, dict[int, int]] = defaultdict(lambda: defaultdict(int))
    final: dict[str, int] = defaultdict(int)
    framing_series: dict[str, list[int]] = {}
    for service, cycles in meter.by_class.items():
        n = completed.get(service, 0)
        for cycle, per in cycles.items():
            for name, b in per.items():
                if cycle < n:
                    per_class[name][cycle] += b
                else:
                    final[name] += b
    for service in completed:
        framing_series[service] = _series(meter.framing.get(service, {}), completed[service])
    file_bytes = 0
    reparsed_class = 0
    files = []
    for service, files_of in paths.items():
        for p in files_of:
            size = Path(p).stat().st_size
            file_bytes += size
            files.append({"path": str(p), "bytes": size})
            with open(p, encoding="ascii") as fh:
                for line in fh:
                    doc = json.loads(line)
                    feats = doc.pop("features")
                    _line, sizes = encode_record(doc, feats)
                    reparsed_class += sum(sizes.values())
    class_total = sum(n for cycles in meter.by_class.values() for per in cycles.values() for n in per.values())
    framing_total = sum(n for cycles in meter.framing.values() for n in cycles.values())
    return {
        "per_class": {name: dict(c) for name, c in per_class.items()},
        "final_bytes": dict(final),
        "framing_bytes": framing_total,
        "framing_per_cycle": framing_series,
        "class_bytes": class_total,
        "file_bytes": file_bytes,
        "identity_holds": class_total + framing_total == file_bytes and reparsed_class == class_total,
        "files": files,
    }


# -- orchestration -----------------------------------------------------------

def trace_id(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def profile_run(cfg: RuntimeConfig, mode: str = "replay", duration: float | None = None,
                classes: Sequence[str] | None = None, output_directory=None,
                reservoir: int = DEFAULT_RESERVOIR, seed: int = 0, source=None,
                processing: bool = True) -> dict:
    """Run the pipeline with cost observation and return the report dict."""
    if classes:
        cfg = with_classes(cfg, classes)
    observer = StateObserver()
    warnings: list[str] = []
    out_dir = Path(output_directory or cfg.output_directory)
    tapped: list = []
    if mode == "replay":
        result = run_replay(cfg, out_dir, observer, source=source)
        trace = {"source": str(cfg.capture_pcap) if cfg.capture_pcap else "stream",
                 "id": trace_id(cfg.capture_pcap) if cfg.capture_pcap else None}
    elif mode == "live":
        result = run_live(cfg, source=source, output_directory=out_dir, observer=observer,
                          duration=duration, tap=tapped.append if processing else None)
        trace = {"source": cfg.capture_interface or "feed", "id": None}
        if result.counters.packets_dropped:
            warnings.append(f"{result.counters.packets_dropped} packets dropped during live capture")
    else:
        raise ValueError(f"unknown mode {mode!r}")

    completed = result.completed_cycles
    writer = result.engine.writer  # None when the trace was empty
    storage = profile_storage(writer.meter if writer else StorageMeter(), result.outputs, completed)
    if not storage["identity_holds"]:
        warnings.append("storage accounting identity does not hold")

    timer = _timer_info()
    if timer["resolution_ns"] > 100:
        warnings.append(f"timer resolution {timer['resolution_ns']:.0f} ns is coarser than 100 ns")

    timing: dict = {}
    if processing:
        if mode == "replay":
            recs = source if source is not None else PcapFileSource(cfg.capture_pcap)
        else:
            recs = tapped
        timing = profile_processing(cfg, recs, reservoir=reservoir, seed=seed)

    classes_out = {}
    for name, services in _class_services(cfg).items():
        n = max(completed.get(s, 0) for s in services)
        before: dict[int, int] = defaultdict(int)
        after: dict[int, int] = defaultdict(int)
        for s in services:
            for c, b in observer.before.get((s, name), {}).items():
                before[c] += b
            for c, b in observer.after.get((s, name), {}).items():
                after[c] += b
        series = _series(storage["per_class"].get(name, {}), n)
        entry = {
            "services": services,
            "state_bytes_per_cycle": _series(before, n),
            "state_bytes_after_collect": _series(after, n),
            "storage_bytes_per_cycle": series,
            "storage_final_bytes": storage["final_bytes"].get(name, 0),
            "storage_bytes_total": sum(series) + storage["final_bytes"].get(name, 0),
        }
        entry.update(timing.get(name, {}))
        classes_out[name] = entry

    return {
        "schema_version": SCHEMA_VERSION,
        "metadata": {
            "mode": mode,
            "trace": trace,
            "config_hash": cfg.config_hash(),
            "emit_intervals": {s.name: s.emit_interval for s in cfg.service_classes},
            "completed_cycles": completed,
            "run_start_ns": result.run_start,
            "run_end_ns": result.run_end,
            "reservoir_size": reservoir,
            "reservoir_seed": seed,
            "median_exact_threshold": reservoir,
            "timer": timer,
            "warnings": warnings,
        },
        "classes": classes_out,
        "storage": {k: storage[k] for k in ("framing_bytes", "framing_per_cycle", "class_bytes",
                                            "file_bytes", "identity_holds", "files")},
        "run": result.counters.as_dict(),
    }


def strip_timing(report: dict) -> dict:
    """Report without the fields expected to vary between identical runs."""
    out = json.loads(json.dumps(report))
    out["metadata"].pop("timer", None)
    out["metadata"]["warnings"] = [w for w in out["metadata"].get("warnings", []) if "timer" not in w]
    for entry in out.get("classes", {}).values():
        for k in TIMING_KEYS:
            entry.pop(k, None)
    out.get("storage", {}).pop("files", None)
    return out


def load_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        report = json.load(fh)
    if report.get("schema_version") != SCHEMA_VERSION:
        raise ReportMismatchError(f"{path}: unsupported report schema {report.get('schema_version')!r}")
    return report


def check_config(report: dict, cfg: RuntimeConfig) -> None:
    if report["metadata"]["config_hash"] != cfg.config_hash():
        raise ReportMismatchError(
            f"report was produced with config {report['metadata']['config_hash']}, "
            f"current config is {cfg.config_hash()}")


def compare_reports(a: dict, b: dict) -> dict:
    """Per-class differences between two reports of the same plan."""
    ha, hb = a["metadata"]["config_hash"], b["metadata"]["config_hash"]
    if ha != hb:
        raise ReportMismatchError(f"config hashes differ ({ha} vs {hb}); refusing to compare")
    out = {}
    for name in sorted(set(a["classes"]) | set(b["classes"])):
        ea, eb = a["classes"].get(name), b["classes"].get(name)
        if ea is None or eb is None:
            out[name] = {"only_in": "a" if eb is None else "b"}
            continue
        ma = (ea.get("add_packet_ns") or {}).get("median")
        mb = (eb.get("add_packet_ns") or {}).get("median")
        out[name] = {
            "median_add_packet_ns": [ma, mb],
            "median_ratio": (mb / ma) if ma and mb else None,
            "storage_bytes_total": [ea["storage_bytes_total"], eb["storage_bytes_total"]],
            "peak_state_bytes": [max(ea["state_bytes_per_cycle"], default=0),
                                 max(eb["state_bytes_per_cycle"], default=0)],
            "state_series_equal": ea["state_bytes_per_cycle"] == eb["state_bytes_per_cycle"],
            "storage_series_equal": ea["storage_bytes_per_cycle"] == eb["storage_bytes_per_cycle"],
        }
    return {"config_hash": ha, "classes": out}
