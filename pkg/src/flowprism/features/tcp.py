"""Transport-layer features: TCP flag/window/retransmission counters and RTT.

Retransmission rule: a payload-bearing segment whose sequence number is not
beyond the highest payload-bearing sequence number already seen in its
direction (32-bit serial comparison). RTT samples follow Karn's rule: one
outstanding measurement at a time, discarded if any retransmission occurs
before it is acknowledged.
"""

from __future__ import annotations

from ..packet import Direction, TCPFlags
from .base import WORD, FeatureArgumentError, FeatureState, container_size, register

_OUT = Direction.OUT
_IN = Direction.IN
_SYN = int(TCPFlags.SYN)
_ACK = int(TCPFlags.ACK)
_FIN = int(TCPFlags.FIN)
_RST = int(TCPFlags.RST)
_PSH = int(TCPFlags.PSH)
_URG = int(TCPFlags.URG)
_HALF = 1 << 31
_MASK = 0xFFFFFFFF


def seq_le(a: int, b: int) -> bool:
    """a <= b in 32-bit sequence space."""
    return ((b - a) & _MASK) < _HALF


def _dir_key(d) -> str:
    return "up" if d is _OUT else "dw"


@register
class TCPCounters(FeatureState):
    name = "TCPCounters"

    def __init__(self):
        self.flags = {"syn": 0, "ack": 0, "fin": 0, "rst": 0, "psh": 0, "urg": 0}
        self.win_last = {_IN: None, _OUT: None}
        self.win_max = {_IN: None, _OUT: None}
        self.retrans = {_IN: 0, _OUT: 0}
        self.payload_pkts = {_IN: 0, _OUT: 0}
        self.highest_seq = {_IN: None, _OUT: None}
        self.skipped = 0

    def add_packet(self, pkt) -> None:
        if not pkt.is_tcp:
            self.skipped += 1
            return
        f = pkt.tcp_flags
        c = self.flags
        if f & _SYN:
            c["syn"] += 1
        if f & _ACK:
            c["ack"] += 1
        if f & _FIN:
            c["fin"] += 1
        if f & _RST:
            c["rst"] += 1
        if f & _PSH:
            c["psh"] += 1
        if f & _URG:
            c["urg"] += 1
        d = pkt.direction
        w = pkt.tcp_window
        self.win_last[d] = w
        mx = self.win_max[d]
        if mx is None or w > mx:
            self.win_max[d] = w
        if pkt.data_length > 0:
            self.payload_pkts[d] += 1
            hi = self.highest_seq[d]
            seq = pkt.tcp_seq
            if hi is None or not seq_le(seq, hi):
                self.highest_seq[d] = seq
            else:
                self.retrans[d] += 1

    def collect(self, slot_size: float, final: bool = False) -> dict:
        out = dict(self.flags)
        for d in (_OUT, _IN):
            k = _dir_key(d)
            out[f"retrans_{k}"] = self.retrans[d]
            out[f"payload_pkts_{k}"] = self.payload_pkts[d]
            out[f"win_last_{k}"] = self.win_last[d]
            out[f"win_max_{k}"] = self.win_max[d]
        out["skipped"] = self.skipped
        for k in self.flags:
            self.flags[k] = 0
        for d in (_OUT, _IN):
            self.retrans[d] = 0
            self.payload_pkts[d] = 0
            self.win_max[d] = self.win_last[d]
        self.skipped = 0
        return out

    def approximate_size(self) -> int:
        # 6 flag counters + 5 per-direction fields + skipped
        return (6 + 5 * 2 + 1) * WORD


def _ms(ns) -> float | None:
    return None if ns is None else ns / 1e6


@register
class LatencyCounters(FeatureState):
    """Handshake RTT, ack-matched RTT samples and jitter.

    Handshake deltas: SYN to SYN-ACK and SYN-ACK to the first ACK from the
    SYN sender. Ongoing samples time an outbound payload segment until an
    inbound ACK covers it. Jitter is the mean absolute difference between
    consecutive samples.
    """

    name = "LatencyCounters"
    default_cap = 1024

    def __init__(self, cap: int = default_cap):
        self.cap = cap
        self.syn_ts = None
        self.syn_dir = None
        self.synack_ts = None
        self.syn_synack = None
        self.synack_ack = None
        self.highest_out = None
        self.pending = None  # (end_seq, sent_ts)
        self.samples: list[int] = []
        self.last_sample = None
        self.jitter_sum = 0
        self.jitter_n = 0

    @classmethod
    def from_args(cls, args):
        if not args:
            return cls
        if len(args) != 1:
            raise FeatureArgumentError("LatencyCounters takes at most (cap)")
        try:
            cap = int(args[0])
        except ValueError:
            raise FeatureArgumentError(f"LatencyCounters cap must be an integer, got {args[0]!r}") from None
        if cap < 1:
            raise FeatureArgumentError("LatencyCounters cap must be >= 1")
        return lambda: cls(cap)

    def add_packet(self, pkt) -> None:
        if not pkt.is_tcp:
            return
        f = pkt.tcp_flags
        ts = pkt.timestamp
        d = pkt.direction
        if f & _SYN:
            if not f & _ACK:
                if self.synack_ts is None:
                    self.syn_ts, self.syn_dir = ts, d
            elif self.syn_ts is not None and d is not self.syn_dir and self.synack_ts is None:
                self.synack_ts = ts
                self.syn_synack = ts - self.syn_ts
            return
        if (f & _ACK and self.synack_ts is not None and self.synack_ack is None
                and d is self.syn_dir):
            self.synack_ack = ts - self.synack_ts

        if d is _OUT and pkt.data_length > 0:
            seq = pkt.tcp_seq
            if self.highest_out is not None and seq_le(seq, self.highest_out):
                self.pending = None  # Karn: ambiguous once anything is resent
            else:
                self.highest_out = seq
                if self.pending is None:
                    self.pending = ((seq + pkt.data_length) & _MASK, ts)
        elif d is _IN and f & _ACK and self.pending is not None:
            end, sent = self.pending
            if seq_le(end, pkt.tcp_ack):
                self.pending = None
                sample = ts - sent
                if sample > 0:
                    self._add_sample(sample)

    def _add_sample(self, sample: int) -> None:
        if len(self.samples) < self.cap:
            self.samples.append(sample)
        if self.last_sample is not None:
            self.jitter_sum += abs(sample - self.last_sample)
            self.jitter_n += 1
        self.last_sample = sample

    def collect(self, slot_size: float, final: bool = False) -> dict:
        s = sorted(self.samples)
        n = len(s)
        if n:
            mid = n // 2
            median = s[mid] if n % 2 else (s[mid - 1] + s[mid]) / 2
            stats = {
                "rtt_min_ms": _ms(s[0]),
                "rtt_mean_ms": _ms(sum(s) / n),
                "rtt_median_ms": _ms(median),
                "rtt_max_ms": _ms(s[-1]),
            }
        else:
            stats = dict.fromkeys(("rtt_min_ms", "rtt_mean_ms", "rtt_median_ms", "rtt_max_ms"))
        out = {
            "handshake_syn_synack_ms": _ms(self.syn_synack),
            "handshake_synack_ack_ms": _ms(self.synack_ack),
            "rtt_samples": n,
            **stats,
            "jitter_ms": _ms(self.jitter_sum / self.jitter_n) if self.jitter_n else None,
        }
        self.samples = []
        self.jitter_sum = 0
        self.jitter_n = 0
        return out

    def handshake_samples(self) -> list[int]:
        return [x for x in (self.syn_synack, self.synack_ack) if x is not None]

    def approximate_size(self) -> int:
        return 12 * WORD + container_size(self.samples)
