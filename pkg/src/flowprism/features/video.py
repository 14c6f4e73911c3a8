"""Application-layer video features: segment detection from request patterns.

An upstream packet carrying a request (any TCP payload, or a UDP payload
larger than a bare QUIC header) closes the running segment and opens a new
one. Downstream payload packets in between are attributed to the running
segment.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

from ..packet import Direction
from .base import WORD, FeatureArgumentError, FeatureState, container_size, register

QUIC_HEADER_LEN = 100

_OUT = Direction.OUT


@dataclass
class VideoSegment:
    len: int = 0
    seq: int = 0
    ts_start: int | None = None
    ts_end: int = 0
    last_pkt: int = 0
    down_pkts: int = 0
    down_bytes: int = 0
    max_d_seq: int = 0

    @property
    def started(self) -> bool:
        return self.ts_start is not None


SEGMENT_SIZE = 8 * WORD


@register
class VideoSegments(FeatureState):
    """Segment tracker.

    ``VideoSegments`` refreshes ``last_pkt`` whenever a downstream packet's
    timestamp exceeds the running segment's ``ts_end`` (which stays 0 until
    the segment is closed); ``VideoSegments(strict)`` compares against
    ``last_pkt`` instead, so out-of-order arrivals cannot move it backwards.
    """

    name = "VideoSegments"

    def __init__(self, strict: bool = False):
        self.strict = strict
        self.completed: list[VideoSegment] = []
        self.running = VideoSegment()

    @classmethod
    def from_args(cls, args):
        if not args:
            return cls
        if args != ["strict"]:
            raise FeatureArgumentError(f"VideoSegments accepts only 'strict', got {args!r}")
        return lambda: cls(strict=True)

    def add_packet(self, pkt) -> None:
        run = self.running
        if pkt.direction is _OUT:
            if (pkt.is_tcp and pkt.data_length > 0) or (not pkt.is_tcp and pkt.data_length > QUIC_HEADER_LEN):
                if run.started and run.down_pkts > 0:
                    run.ts_end = run.last_pkt
                    self.completed.append(run)
                self.running = VideoSegment(len=pkt.wire_length, ts_start=pkt.timestamp,
                                            seq=pkt.tcp_seq or 0)
        elif pkt.data_length > 0:
            run.down_pkts += 1
            run.down_bytes += pkt.data_length
            seq = pkt.tcp_seq or 0
            if seq > run.max_d_seq:
                run.max_d_seq = seq
            ref = run.last_pkt if self.strict else run.ts_end
            if pkt.timestamp > ref:
                run.last_pkt = pkt.timestamp

    def collect(self, slot_size: float, final: bool = False) -> list[dict]:
        if final:
            run = self.running
            if run.started and run.down_pkts > 0:
                run.ts_end = run.last_pkt
                self.completed.append(run)
            self.running = VideoSegment()
        out = [asdict(s) for s in self.completed]
        self.completed = []
        return out

    def approximate_size(self) -> int:
        # the running segment plus the completed list (allocated slots)
        return WORD + SEGMENT_SIZE + container_size(self.completed) + SEGMENT_SIZE * len(self.completed)
