"""Capture -> decode -> categorize -> flow cache -> features -> emit.

Replay runs on virtual time taken from packet timestamps and processes
partitions inline, so it is lossless and reproducible. Live capture feeds
one worker thread per partition over bounded queues; packets that do not
fit are dropped and counted. In both modes interval collection happens on
the thread that owns the partition, after every packet that precedes the
boundary and before any packet that follows it.
"""

from __future__ import annotations

import heapq
import logging
import queue
import signal
import threading
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

from .capture import AfPacketSource, CaptureSource, PcapFileSource, Record
from .categorization import DNS_PORT, ServiceMap
from .config import RuntimeConfig
from .flowcache import FlowCache, FlowRecord, partition_of
from .packet import PROTO_UDP, DecodeError, DecodedPacket, FlowKey, LocalNetworks, decode, flow_key
from .output import EmitWriter

log = logging.getLogger(__name__)

NS = 1_000_000_000
SWEEP_INTERVAL_S = 10
REORDER_WINDOW = 1024


@dataclass
class RunCounters:
    packets_read: int = 0
    packets_processed: int = 0
    packets_dropped: int = 0
    decode_errors: Counter = field(default_factory=Counter)
    dns_packets: int = 0
    dns_ingested: int = 0
    dns_malformed: int = 0
    cache_full_drops: int = 0
    late_packets: int = 0
    flows_created: int = 0
    flows_evicted: int = 0
    records_emitted: int = 0

    @property
    def total_decode_errors(self) -> int:
        return sum(self.decode_errors.values())

    def as_dict(self) -> dict:
        d = asdict(self)
        d["decode_errors"] = dict(sorted(self.decode_errors.items()))
        return d


def dispatch(pkt: DecodedPacket, partitions: int) -> int:
    """Partition (worker) index for a decoded packet."""
    return partition_of(flow_key(pkt), partitions)


def is_dns(pkt: DecodedPacket) -> bool:
    return pkt.protocol == PROTO_UDP and (pkt.src_port == DNS_PORT or pkt.dst_port == DNS_PORT)


def decode_and_ingest(frame: bytes, ts: int, wire_length: int, local: LocalNetworks,
                      service_map: ServiceMap, counters: RunCounters) -> DecodedPacket | None:
    """Decode one frame and feed DNS traffic to the service map.

    Returns None (after counting the error category) for undecodable or
    ambiguous-direction frames. DNS seen between two local hosts, such as a
    local resolver answering a client, is still learned from before the
    packet is dropped.
    """
    try:
        pkt = decode(frame, ts, local, wire_length)
    except DecodeError as exc:
        counters.decode_errors[exc.category] += 1
        if exc.packet is not None and is_dns(exc.packet):
            counters.dns_packets += 1
            counters.dns_ingested += service_map.ingest_dns(exc.packet)
        return None
    if pkt.protocol == PROTO_UDP and (pkt.src_port == DNS_PORT or pkt.dst_port == DNS_PORT):
        counters.dns_packets += 1
        counters.dns_ingested += service_map.ingest_dns(pkt)
    return pkt


class _Timer:
    __slots__ = ("index", "name", "emit_ns", "interval_start", "next_boundary", "cycle")

    def __init__(self, index: int, name: str, emit_s: int, t0: int):
        self.index = index
        self.name = name
        self.emit_ns = emit_s * NS
        self.interval_start = t0
        self.next_boundary = t0 + self.emit_ns
        self.cycle = 0


class Engine:
    """State shared by replay and live runs.

    ``observer`` (optional) receives ``on_state(service, cycle, feature,
    before, after)`` for every collected feature state; it must not mutate
    anything.
    """

    def __init__(self, cfg: RuntimeConfig, output_directory=None, observer=None):
        self.cfg = cfg
        self.services = cfg.service_classes
        self.service_map = ServiceMap(self.services, cfg.dns_ttl_floor)
        self.cache = FlowCache([s.features for s in self.services], partitions=cfg.worker_count,
                               max_flows=cfg.max_flows, store_unclassified=cfg.store_unclassified)
        self.local = LocalNetworks(cfg.local_prefixes)
        self.counters = RunCounters()
        self.output_directory = Path(output_directory or cfg.output_directory)
        self.observer = observer
        self.writer: EmitWriter | None = None
        self.timers: list[_Timer] = []
        self.run_start: int | None = None
        self.next_due: float = float("inf")
        self.next_sweep: int = 0
        self._now = 0
        self._lock = threading.Lock()

    # -- lifecycle ---------------------------------------------------------

    def start(self, t0: int) -> None:
        self.run_start = t0
        self.writer = EmitWriter(self.output_directory, t0 // NS, self.cfg.rotate_mb)
        self.timers = [_Timer(i, s.name, s.emit_interval, t0) for i, s in enumerate(self.services)]
        self.next_sweep = t0 + SWEEP_INTERVAL_S * NS
        self._update_due()

    def _update_due(self) -> None:
        due = [t.next_boundary for t in self.timers]
        due.append(self.next_sweep)
        self.next_due = min(due)

    def due_events(self, now: int) -> list[tuple]:
        """Pop every boundary <= now, in time order.

        Items are ``(t, None)`` for an idle sweep and ``(t, timer, start, end,
        cycle)`` for an interval collection; the timer is advanced here. At
        equal times the sweep comes first so idle flows leave with a final
        record instead of an interval record.
        """
        events = []
        while self.next_due <= now:
            t = self.next_due
            if self.next_sweep == t:
                events.append((t, None))
                self.next_sweep += SWEEP_INTERVAL_S * NS
            for timer in self.timers:
                if timer.next_boundary == t:
                    events.append((t, timer) + self.advance_timer(timer))
            self._update_due()
        return events

    # -- per-packet path ---------------------------------------------------

    def decode_frame(self, ts: int, frame: bytes, wire_length: int):
        return decode_and_ingest(frame, ts, wire_length, self.local, self.service_map, self.counters)

    def _classify(self, key: FlowKey, remote) -> int | None:
        return self.service_map.classify(key, remote, self._now)

    def handle(self, pkt: DecodedPacket, key: FlowKey, partition: int | None = None) -> FlowRecord | None:
        self._now = pkt.timestamp
        rec = self.cache.upsert(key, pkt, self._classify, partition)
        if rec is None:
            return None
        for st in rec.feature_states:
            st.add_packet(pkt)
        rec.packets += 1
        return rec

    # -- collection --------------------------------------------------------

    def _emit(self, rec: FlowRecord, timer: _Timer, start: int, end: int, final: bool, cycle: int) -> None:
        slot = (end - start) / NS
        if slot <= 0:
            slot = timer.emit_ns / NS
        obs = self.observer
        if obs is not None:
            before = [st.approximate_size() for st in rec.feature_states]
        features = {}
        for name, st in zip(rec.feature_names, rec.feature_states):
            features[name] = st.collect(slot, final)
        if obs is not None:
            for name, st, b in zip(rec.feature_names, rec.feature_states, before):
                obs.on_state(timer.name, cycle, name, b, st.approximate_size(), final)
        head = {"interval_start": start, "interval_end": end, "service": timer.name,
                "final": final, "flow": rec.key.as_dict()}
        self.writer.write(timer.name, cycle, head, features)

    def collect_interval(self, timer: _Timer, start: int, end: int, cycle: int,
                         partition: int | None = None) -> int:
        n = 0
        for rec in self.cache.snapshot_service(timer.index, partition):
            self._emit(rec, timer, start, end, False, cycle)
            n += 1
        return n

    def final_record(self, rec: FlowRecord, now: int) -> None:
        if rec.service is None:
            return
        timer = self.timers[rec.service]
        start = timer.interval_start
        self._emit(rec, timer, start, max(now, start), True, timer.cycle)

    def evict(self, now: int, partition: int | None = None) -> int:
        n = self.cache.evict_idle(now, self.cfg.flow_idle_timeout,
                                  on_evict=lambda rec: self.final_record(rec, now), partition=partition)
        return n

    def advance_timer(self, timer: _Timer) -> tuple[int, int, int]:
        start, end, cycle = timer.interval_start, timer.next_boundary, timer.cycle
        timer.interval_start = end
        timer.next_boundary = end + timer.emit_ns
        timer.cycle += 1
        return start, end, cycle

    def finish(self, now: int) -> None:
        if self.writer is None:
            return
        for rec in list(self.cache.records()):
            self.final_record(rec, now)
        self.writer.flush()
        self.writer.close()
        self.counters.cache_full_drops = self.cache.stats.rejected
        self.counters.flows_created = self.cache.stats.inserts
        self.counters.flows_evicted = self.cache.stats.evictions
        self.counters.records_emitted = self.writer.records_written
        self.counters.dns_malformed = self.service_map.dns_malformed

    def completed_cycles(self) -> dict[str, int]:
        return {t.name: t.cycle for t in self.timers}

    def output_paths(self) -> dict[str, list[Path]]:
        return self.writer.paths() if self.writer else {}


def _reordered(records: Iterable[Record], counters: RunCounters, window: int = REORDER_WINDOW) -> Iterator[Record]:
    """Yield records in timestamp order, tolerating disorder within ``window``.

    Records older than what has already been released get the watermark
    timestamp and are counted as late.
    """
    heap: list = []
    seq = 0
    watermark = None
    push, pop = heapq.heappush, heapq.heappop
    for ts, frame, wl in records:
        push(heap, (ts, seq, frame, wl))
        seq += 1
        if len(heap) > window:
            ts0, _, f0, w0 = pop(heap)
            if watermark is not None and ts0 < watermark:
                counters.late_packets += 1
                ts0 = watermark
            watermark = ts0
            yield ts0, f0, w0
    while heap:
        ts0, _, f0, w0 = pop(heap)
        if watermark is not None and ts0 < watermark:
            counters.late_packets += 1
            ts0 = watermark
        watermark = ts0
        yield ts0, f0, w0


@dataclass
class RunResult:
    counters: RunCounters
    outputs: dict
    completed_cycles: dict
    run_start: int | None
    run_end: int | None
    engine: Engine

    def summary(self) -> dict:
        return {
            "counters": self.counters.as_dict(),
            "outputs": {s: [str(p) for p in ps] for s, ps in self.outputs.items()},
            "completed_cycles": self.completed_cycles,
            "run_start_ns": self.run_start,
            "run_end_ns": self.run_end,
        }


def run_replay(cfg: RuntimeConfig, output_directory=None, observer=None,
               source: CaptureSource | None = None,
               on_packet: Callable[[DecodedPacket, FlowKey, FlowRecord | None], None] | None = None) -> RunResult:
    """Replay a capture file through the full pipeline on virtual time."""
    if source is None:
        if cfg.capture_pcap is None:
            raise ValueError("replay needs a pcap capture source")
        source = PcapFileSource(cfg.capture_pcap)
    engine = Engine(cfg, output_directory, observer)
    c = engine.counters
    nparts = engine.cache.n_partitions
    last_ts = None
    for ts, frame, wl in _reordered(source, c):
        c.packets_read += 1
        if engine.run_start is None:
            engine.start(ts)
        if ts >= engine.next_due:
            _fire(engine, ts)
        last_ts = ts
        pkt = engine.decode_frame(ts, frame, wl)
        if pkt is None:
            continue
        key = flow_key(pkt)
        rec = engine.handle(pkt, key, partition_of(key, nparts))
        c.packets_processed += 1
        if on_packet is not None:
            on_packet(pkt, key, rec)
    if last_ts is not None:
        engine.finish(last_ts)
    return RunResult(c, engine.output_paths(), engine.completed_cycles(), engine.run_start, last_ts, engine)


def _fire(engine: Engine, now: int) -> None:
    for ev in engine.due_events(now):
        if ev[1] is None:
            engine.evict(ev[0])
            engine.service_map.sweep(ev[0])
        else:
            engine.collect_interval(*ev[1:])


# -- live mode ---------------------------------------------------------------

_STOP = ("stop",)


class _Worker(threading.Thread):
    def __init__(self, engine: Engine, index: int, maxsize: int, hook=None):
        super().__init__(name=f"worker-{index}", daemon=True)
        self.engine = engine
        self.index = index
        self.queue: queue.Queue = queue.Queue(maxsize=maxsize)
        self.hook = hook
        self.processed = 0
        self.error: BaseException | None = None

    def run(self) -> None:
        eng = self.engine
        get = self.queue.get
        try:
            while True:
                msg = get()
                kind = msg[0]
                if kind == "pkt":
                    if self.hook is not None:
                        self.hook(msg[1])
                    eng.handle(msg[1], msg[2], self.index)
                    self.processed += 1
                elif kind == "collect":
                    _, timer, start, end, cycle = msg
                    eng.collect_interval(timer, start, end, cycle, self.index)
                elif kind == "evict":
                    eng.evict(msg[1], self.index)
                elif kind == "stop":
                    return
        except BaseException as exc:  # surfaced by run_live
            self.error = exc
            log.exception("worker %d failed", self.index)


def open_live_source(cfg: RuntimeConfig) -> CaptureSource:
    if cfg.capture_interface is None:
        raise ValueError("live capture needs an interface")
    return AfPacketSource(cfg.capture_interface)


def run_live(cfg: RuntimeConfig, source: CaptureSource | None = None, output_directory=None,
             observer=None, duration: float | None = None, stop_event: threading.Event | None = None,
             clock: Callable[[], int] = time.time_ns, worker_hook=None,
             tap: Callable[[Record], None] | None = None) -> RunResult:
    """Capture until stopped (signal, ``stop_event`` or ``duration`` seconds).

    Emit timers run on ``clock``. ``worker_hook(pkt)`` runs in the worker
    before each packet (fault injection). ``tap`` sees every raw record.
    """
    if source is None:
        source = open_live_source(cfg)
    stop_event = stop_event or threading.Event()
    engine = Engine(cfg, output_directory, observer)
    c = engine.counters
    t0 = clock()
    engine.start(t0)
    workers = [_Worker(engine, i, cfg.queue_size, worker_hook) for i in range(cfg.worker_count)]
    for w in workers:
        w.start()

    previous = {}
    if threading.current_thread() is threading.main_thread():
        def _on_signal(signum, frame):
            stop_event.set()
        for sig in (signal.SIGINT, signal.SIGTERM):
            previous[sig] = signal.signal(sig, _on_signal)

    deadline = None if duration is None else t0 + int(duration * NS)
    nparts = len(workers)
    try:
        for item in source:
            now = clock()
            if deadline is not None and now >= deadline:
                _live_fire(engine, workers, deadline)
                break
            if now >= engine.next_due:
                _live_fire(engine, workers, now)
                log.info("live: %s", c.as_dict())
            if stop_event.is_set():
                break
            if item is None:
                continue
            if tap is not None:
                tap(item)
            ts, frame, wl = item
            c.packets_read += 1
            pkt = engine.decode_frame(ts, frame, wl)
            if pkt is None:
                continue
            key = flow_key(pkt)
            try:
                workers[partition_of(key, nparts)].queue.put_nowait(("pkt", pkt, key))
            except queue.Full:
                c.packets_dropped += 1
        else:
            if deadline is not None:
                _live_fire(engine, workers, min(clock(), deadline))
    finally:
        for w in workers:
            w.queue.put(_STOP)
        for w in workers:
            w.join()
        for sig, handler in previous.items():
            signal.signal(sig, handler)
        source.close()
    end = clock() if deadline is None else min(clock(), deadline)
    c.packets_processed = sum(w.processed for w in workers)
    engine.finish(end)
    if c.packets_dropped:
        log.warning("live capture dropped %d packets (queue overflow)", c.packets_dropped)
    errors = [w.error for w in workers if w.error is not None]
    if errors:
        raise RuntimeError(f"worker failed: {errors[0]!r}") from errors[0]
    return RunResult(c, engine.output_paths(), engine.completed_cycles(), t0, end, engine)


def _live_fire(engine: Engine, workers: list[_Worker], now: int) -> None:
    for ev in engine.due_events(now):
        if ev[1] is None:
            for w in workers:
                w.queue.put(("evict", ev[0]))
            engine.service_map.sweep(ev[0])
        else:
            for w in workers:
                w.queue.put(("collect",) + ev[1:])
