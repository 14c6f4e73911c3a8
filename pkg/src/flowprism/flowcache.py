"""Horizontally partitioned flow table.

Each partition is a plain dict owned by one worker; the partition of a key is
a pure function of the key so both directions of a flow always land in the
same place and no key can appear in two partitions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

from .features import FeatureRef
from .packet import FlowKey, ip_from_any
from .stats import StreamingStats

NS = 1_000_000_000
_PERF = time.perf_counter_ns


def partition_of(key: FlowKey, partitions: int) -> int:
    """Stable, direction-independent partition index.

    FlowKey is a tuple of ints, and CPython hashes ints and tuples of ints
    without per-process salting, so the result is reproducible across runs.
    """
    if partitions == 1:
        return 0
    return hash(key) % partitions


class FlowRecord:
    __slots__ = ("key", "service", "created_at", "last_seen", "feature_names",
                 "feature_states", "local", "packets")

    def __init__(self, key: FlowKey, service: int | None, ts: int, local: tuple[int, int] | None,
                 refs: Sequence[FeatureRef] = ()):
        self.key = key
        self.service = service
        self.created_at = ts
        self.last_seen = ts
        self.local = local
        self.feature_names = tuple(r.text for r in refs)
        self.feature_states = [r.build() for r in refs]
        self.packets = 0

    def __repr__(self) -> str:
        return f"FlowRecord({self.key}, service={self.service}, packets={self.packets})"


@dataclass
class CacheStats:
    current_size: int = 0
    inserts: int = 0
    updates: int = 0
    evictions: int = 0
    rejected: int = 0
    insert_latency: StreamingStats = field(default_factory=StreamingStats)
    update_latency: StreamingStats = field(default_factory=StreamingStats)

    def as_dict(self) -> dict:
        return {
            "current_size": self.current_size,
            "inserts": self.inserts,
            "updates": self.updates,
            "evictions": self.evictions,
            "rejected": self.rejected,
            "insert_latency_ns": self.insert_latency.summary(),
            "update_latency_ns": self.update_latency.summary(),
        }


Classifier = Callable[[FlowKey, tuple[int, int]], "int | None"]


class FlowCache:
    """Flow table with ``partitions`` shards.

    ``service_features[i]`` lists the feature references of service ``i``.
    When ``timed`` is set every upsert records its latency into the insert or
    update statistics (used by the cache benchmark).
    """

    def __init__(self, service_features: Sequence[Sequence[FeatureRef]], partitions: int = 1,
                 max_flows: int = 2_000_000, store_unclassified: bool = True, timed: bool = False):
        if partitions < 1:
            raise ValueError("partitions must be >= 1")
        self.partitions: list[dict[FlowKey, FlowRecord]] = [{} for _ in range(partitions)]
        self.service_features = [tuple(f) for f in service_features]
        self.max_flows = max_flows
        self.store_unclassified = store_unclassified
        self.timed = timed
        self.stats = CacheStats()
        self._size = 0

    @property
    def n_partitions(self) -> int:
        return len(self.partitions)

    def __len__(self) -> int:
        return self._size

    def partition_of(self, key: FlowKey) -> int:
        return partition_of(key, len(self.partitions))

    def get(self, key: FlowKey) -> FlowRecord | None:
        return self.partitions[partition_of(key, len(self.partitions))].get(key)

    def upsert(self, key: FlowKey, pkt, classify: Classifier, partition: int | None = None) -> FlowRecord | None:
        """Return the record for ``key``, creating and classifying it if new.

        Returns None if the flow is not stored: cache at capacity (counted in
        ``stats.rejected``) or unclassified with ``store_unclassified`` off.
        """
        t0 = _PERF() if self.timed else 0
        part = self.partitions[partition if partition is not None else partition_of(key, len(self.partitions))]
        rec = part.get(key)
        if rec is not None:
            rec.last_seen = pkt.timestamp
            self.stats.updates += 1
            if self.timed:
                self.stats.update_latency.add(_PERF() - t0)
            return rec
        if self._size >= self.max_flows:
            self.stats.rejected += 1
            return None
        remote, local = pkt.remote, pkt.local
        service = classify(key, remote)
        if service is None and not self.store_unclassified:
            return None
        refs = self.service_features[service] if service is not None else ()
        rec = FlowRecord(key, service, pkt.timestamp, local, refs)
        part[key] = rec
        self._size += 1
        self.stats.inserts += 1
        self.stats.current_size = self._size
        if self.timed:
            self.stats.insert_latency.add(_PERF() - t0)
        return rec

    def evict_idle(self, now: int, timeout: float, on_evict: Callable[[FlowRecord], None] | None = None,
                   partition: int | None = None) -> int:
        """Remove records idle for more than ``timeout`` seconds.

        ``on_evict`` sees each record before removal (final collection).
        """
        limit = int(timeout * NS)
        parts = self.partitions if partition is None else [self.partitions[partition]]
        evicted = 0
        for part in parts:
            stale = [k for k, r in part.items() if now - r.last_seen > limit]
            for k in stale:
                rec = part.pop(k)
                if on_evict is not None:
                    on_evict(rec)
            evicted += len(stale)
        self._size -= evicted
        self.stats.evictions += evicted
        self.stats.current_size = self._size
        return evicted

    def remove(self, key: FlowKey) -> FlowRecord | None:
        rec = self.partitions[self.partition_of(key)].pop(key, None)
        if rec is not None:
            self._size -= 1
            self.stats.current_size = self._size
        return rec

    def records(self, partition: int | None = None) -> Iterator[FlowRecord]:
        parts = self.partitions if partition is None else [self.partitions[partition]]
        for part in parts:
            yield from part.values()

    def snapshot_service(self, service: int, partition: int | None = None) -> list[FlowRecord]:
        return [r for r in self.records(partition) if r.service == service]

    def snapshot_device(self, ip, partition: int | None = None) -> list[FlowRecord]:
        target = ip_from_any(ip)
        return [r for r in self.records(partition) if r.local == target]

    def partition_sizes(self) -> list[int]:
        return [len(p) for p in self.partitions]
