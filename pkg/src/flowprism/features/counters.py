"""Network-layer features: packet/byte counters and packet interarrival times."""

from __future__ import annotations

import math
from array import array

from ..packet import Direction
from .base import WORD, FeatureArgumentError, FeatureState, container_size, register

_OUT = Direction.OUT
_IN = Direction.IN


@register
class PacketCounters(FeatureState):
    """Per-direction packet and byte counters, reported as rates."""

    name = "PacketCounters"
    __slots__ = ("in_counter", "out_counter", "in_bytes", "out_bytes")

    def __init__(self):
        self.in_counter = 0
        self.out_counter = 0
        self.in_bytes = 0
        self.out_bytes = 0

    def add_packet(self, pkt) -> None:
        if pkt.direction is _IN:
            self.in_counter += 1
            self.in_bytes += pkt.wire_length
        elif pkt.direction is _OUT:
            self.out_counter += 1
            self.out_bytes += pkt.wire_length

    def collect(self, slot_size: float, final: bool = False) -> dict:
        # pps comes from packet counters, kbps from bytes (1 kbit = 128 bytes)
        out = {
            "kbps_up": self.out_bytes / (slot_size * 128.0),
            "kbps_dw": self.in_bytes / (slot_size * 128.0),
            "pps_up": self.out_counter / slot_size,
            "pps_dw": self.in_counter / slot_size,
        }
        self.in_counter = self.out_counter = self.in_bytes = self.out_bytes = 0
        return out

    def approximate_size(self) -> int:
        return 4 * WORD


def _summary(ts: array) -> dict | None:
    n = len(ts)
    if n < 2:
        return None
    gaps = sorted(ts[i] - ts[i - 1] for i in range(1, n))
    m = len(gaps)
    mean = sum(gaps) / m
    mid = m // 2
    median = gaps[mid] if m % 2 else (gaps[mid - 1] + gaps[mid]) / 2
    var = sum((g - mean) ** 2 for g in gaps) / m
    return {
        "count": m,
        "min_us": gaps[0] / 1e3,
        "mean_us": mean / 1e3,
        "median_us": median / 1e3,
        "max_us": gaps[-1] / 1e3,
        "stddev_us": math.sqrt(var) / 1e3,
    }


@register
class PacketTimes(FeatureState):
    """Arrival timestamps per direction, summarised as interarrival statistics.

    ``PacketTimes(cap)`` bounds the stored timestamps per direction and
    interval; ``PacketTimes(cap,raw)`` also emits the raw interarrival list.
    The last timestamp of each direction is carried into the next interval so
    the first gap of an interval is measured from the previous packet.
    """

    name = "PacketTimes"
    default_cap = 8192

    def __init__(self, cap: int = default_cap, raw: bool = False):
        self.cap = cap
        self.raw = raw
        self.times = {_IN: array("q"), _OUT: array("q")}
        self.dropped = 0

    @classmethod
    def from_args(cls, args):
        if len(args) > 2:
            raise FeatureArgumentError("PacketTimes takes at most (cap, raw)")
        cap = cls.default_cap
        raw = False
        if args:
            try:
                cap = int(args[0])
            except ValueError:
                raise FeatureArgumentError(f"PacketTimes cap must be an integer, got {args[0]!r}") from None
            if cap < 2:
                raise FeatureArgumentError("PacketTimes cap must be >= 2")
        if len(args) == 2:
            if args[1] != "raw":
                raise FeatureArgumentError(f"PacketTimes second argument must be 'raw', got {args[1]!r}")
            raw = True
        return lambda: cls(cap, raw)

    def add_packet(self, pkt) -> None:
        d = pkt.direction
        if d is None:
            return
        ts = self.times[d]
        if len(ts) >= self.cap:
            self.dropped += 1
            return
        if ts and pkt.timestamp < ts[-1]:
            # keep the per-direction sequence non-decreasing
            ts.append(ts[-1])
        else:
            ts.append(pkt.timestamp)

    def collect(self, slot_size: float, final: bool = False) -> dict:
        out = {
            "iat_up": _summary(self.times[_OUT]),
            "iat_dw": _summary(self.times[_IN]),
            "truncated_pkts": self.dropped,
        }
        if self.raw:
            for d, k in ((_OUT, "raw_iat_up_ns"), (_IN, "raw_iat_dw_ns")):
                ts = self.times[d]
                out[k] = [ts[i] - ts[i - 1] for i in range(1, len(ts))]
        for d, ts in self.times.items():
            last = ts[-1] if ts else None
            fresh = array("q")
            if last is not None:
                fresh.append(last)
            self.times[d] = fresh
        self.dropped = 0
        return out

    def approximate_size(self) -> int:
        return 3 * WORD + sum(container_size(ts) for ts in self.times.values())
