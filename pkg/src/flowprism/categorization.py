"""Mapping of remote IP addresses to service classes.

Two sources feed the map: static prefixes from the configuration
(longest-prefix match, consulted first) and addresses learned from DNS
responses whose query name or CNAME chain matches a service's domain
patterns. Ties between services go to the one listed first in the config.

The DNS table is written by a single ingest path; entries are immutable
tuples replaced wholesale, so concurrent readers never see a torn entry.
"""

from __future__ import annotations

import json
import logging
import math
from typing import Sequence

from .config import ServiceClassSpec
from .dns import TYPE_A, DnsParseError, answer_chains, parse_message
from .packet import DecodedPacket, ip_from_any, ip_to_str

log = logging.getLogger(__name__)

DNS_PORT = 53
NS = 1_000_000_000


class ServiceMap:
    def __init__(self, services: Sequence[ServiceClassSpec], ttl_floor: float = 300.0):
        self.services = tuple(services)
        self.ttl_floor = ttl_floor
        # version -> [(prefix_len, {masked_addr: service_idx})], longest first
        self.prefix_table: dict[int, list[tuple[int, int, dict[int, int]]]] = {4: [], 6: []}
        self.dns_table: dict[tuple[int, int], tuple[int, float]] = {}
        self.regex_index = [(p, i) for i, s in enumerate(self.services) for p in s.patterns]
        self.dns_malformed = 0
        self.dns_responses = 0
        self._build_prefixes()

    def _build_prefixes(self) -> None:
        by_len: dict[tuple[int, int], dict[int, int]] = {}
        for idx, svc in enumerate(self.services):
            for net in svc.networks:
                slot = by_len.setdefault((net.version, net.prefixlen), {})
                slot.setdefault(int(net.network_address), idx)
        for (version, plen), table in sorted(by_len.items(), key=lambda kv: -kv[0][1]):
            bits = 32 if version == 4 else 128
            mask = ((1 << bits) - 1) ^ ((1 << (bits - plen)) - 1)
            self.prefix_table[version].append((plen, mask, table))

    def service_name(self, idx: int | None) -> str | None:
        return None if idx is None else self.services[idx].name

    def match_prefix(self, version: int, addr: int) -> int | None:
        for _plen, mask, table in self.prefix_table[version]:
            hit = table.get(addr & mask)
            if hit is not None:
                return hit
        return None

    def match_name(self, names: Sequence[str]) -> int | None:
        for idx, svc in enumerate(self.services):
            for n in names:
                if svc.matches_name(n):
                    return idx
        return None

    def classify(self, key, remote_ip, now: int | None = None) -> int | None:
        """Service index for a flow's remote endpoint, or None.

        Prefix matches win over DNS-learned entries. Expired DNS entries are
        removed when encountered (only if ``now`` is given).
        """
        version, addr = ip_from_any(remote_ip)
        hit = self.match_prefix(version, addr)
        if hit is not None:
            return hit
        entry = self.dns_table.get((version, addr))
        if entry is None:
            return None
        idx, expiry = entry
        if now is not None and now >= expiry:
            self.dns_table.pop((version, addr), None)
            return None
        return idx

    def insert_dns(self, ip, idx: int, ttl: int, now: int) -> None:
        ttl_s = max(ttl, self.ttl_floor)
        expiry = math.inf if math.isinf(ttl_s) else now + int(ttl_s * NS)
        # expiry must lie strictly after insertion time
        if expiry <= now:
            expiry = now + 1
        self.dns_table[ip_from_any(ip)] = (idx, expiry)

    def ingest_dns(self, pkt: DecodedPacket) -> int:
        """Learn address mappings from a DNS response; returns mappings added."""
        if pkt.protocol != 17 or pkt.src_port != DNS_PORT:
            return 0
        if not self.regex_index:
            return 0
        try:
            msg = parse_message(pkt.payload_bytes)
        except DnsParseError:
            self.dns_malformed += 1
            return 0
        if not msg.is_response:
            return 0
        self.dns_responses += 1
        if msg.truncated:
            self.dns_malformed += 1
        added = 0
        for names, records in answer_chains(msg):
            if not records:
                continue
            idx = self.match_name(names)
            if idx is None:
                continue
            for rr in records:
                version = 4 if rr.rtype == TYPE_A else 6
                self.insert_dns((version, int.from_bytes(rr.value, "big")), idx, rr.ttl, pkt.timestamp)
                added += 1
        return added

    def sweep(self, now: int) -> int:
        expired = [k for k, (_i, exp) in self.dns_table.items() if now >= exp]
        for k in expired:
            self.dns_table.pop(k, None)
        return len(expired)

    def to_json(self) -> str:
        prefixes = []
        for version, levels in self.prefix_table.items():
            for plen, _mask, table in levels:
                for net, idx in table.items():
                    prefixes.append({"prefix": f"{ip_to_str(version, net)}/{plen}",
                                     "service": self.services[idx].name})
        dns = [
            {"ip": ip_to_str(v, a), "service": self.services[idx].name,
             "expiry_ns": None if math.isinf(exp) else exp}
            for (v, a), (idx, exp) in sorted(self.dns_table.items())
        ]
        return json.dumps({"prefixes": prefixes, "dns": dns,
                           "patterns": [{"pattern": p.pattern, "service": self.services[i].name}
                                        for p, i in self.regex_index]}, indent=2)
