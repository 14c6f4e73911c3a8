"""Flow cache insert-versus-update microbenchmark."""

from __future__ import annotations

import random
import time

from .categorization import ServiceMap
from .config import build_service
from .flowcache import FlowCache
from .packet import PROTO_TCP, FlowKey

DEFAULT_COLLECT = ("PacketCounters", "TCPCounters", "VideoSegments")


class _BenchPacket:
    __slots__ = ("timestamp", "remote", "local")

    def __init__(self, ts: int, remote, local):
        self.timestamp = ts
        self.remote = remote
        self.local = local


def _keys(n: int, rng: random.Random) -> list[FlowKey]:
    keys = set()
    while len(keys) < n:
        a = 0x0A000000 | rng.getrandbits(24)
        b = rng.getrandbits(32) | 0x01000000
        lo, hi = sorted((a, b))
        keys.add(FlowKey(PROTO_TCP, lo, hi, rng.randrange(1024, 65536), 443, 4))
    return sorted(keys)


def bench_cache(flows: int = 100_000, updates: int = 1_000_000, partitions: int = 1, seed: int = 0,
                collect=DEFAULT_COLLECT) -> dict:
    """Insert ``flows`` distinct keys, then apply ``updates`` random updates.

    Every upsert is timed. An insert does what a new flow costs in the
    pipeline: classification against a service map (one prefix covering all
    remote addresses) and creation of the service's feature states. Updates
    pick keys uniformly at random among the inserted flows.
    """
    rng = random.Random(seed)
    keys = _keys(flows, rng)
    rng.shuffle(keys)
    service = build_service("bench", prefixes=["0.0.0.0/0"], collect=list(collect), emit_interval=10)
    smap = ServiceMap([service])
    cache = FlowCache([service.features], partitions=partitions, max_flows=max(flows, 1), timed=True)

    def classify(key, remote):
        return smap.classify(key, remote)

    t_start = time.perf_counter()
    ts = 0
    for k in keys:
        ts += 1
        cache.upsert(k, _BenchPacket(ts, (4, k.addr_hi), (4, k.addr_lo)), classify)
    pkt = _BenchPacket(ts, None, None)
    pick = rng.randrange
    for _ in range(updates if flows else 0):
        pkt.timestamp += 1
        cache.upsert(keys[pick(flows)], pkt, classify)
    elapsed = time.perf_counter() - t_start

    stats = cache.stats.as_dict()
    mi = stats["insert_latency_ns"]["median"]
    mu = stats["update_latency_ns"]["median"]
    return {
        "flows": flows,
        "updates": updates,
        "partitions": partitions,
        "seed": seed,
        "collect": list(service.collect),
        "elapsed_s": elapsed,
        "cache": stats,
        "partition_sizes": cache.partition_sizes(),
        "median_insert_ns": mi,
        "median_update_ns": mu,
        "insert_update_ratio": (mi / mu) if mi and mu else None,
    }
