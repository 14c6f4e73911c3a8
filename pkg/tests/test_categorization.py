import ipaddress
import math
import random

import pytest

from framegen import dns_query, dns_response, udp_frame
from flowprism.categorization import ServiceMap
from flowprism.config import build_service, load_config
from flowprism.packet import decode

from test_config import NETFLIX

LOCAL = ["10.0.0.0/8"]
NS = 10**9
T = 1_700_000_000 * NS


def netflix_map(ttl_floor=300.0):
    return ServiceMap(load_config(NETFLIX).service_classes, ttl_floor)


def dns_pkt(qname, answers, ts=T, **kw):
    return decode(udp_frame("8.8.8.8", 53, "10.0.0.5", 40000, dns_response(qname, answers, **kw)), ts, LOCAL)


def test_nflxvideo_mapping():
    m = netflix_map()
    n = m.ingest_dns(dns_pkt("foo.nflxvideo.net", [("foo.nflxvideo.net", "A", 300, "23.246.10.1")]))
    assert n == 1
    assert m.classify(None, "23.246.10.1", T) == 0
    assert m.dns_table[(4, int(ipaddress.ip_address("23.246.10.1")))][0] == 0


def test_unmatched_name_adds_nothing():
    m = netflix_map()
    assert m.ingest_dns(dns_pkt("example.org", [("example.org", "A", 300, "93.184.216.34")])) == 0
    assert m.dns_table == {}


def test_cname_chain_match():
    svc = build_service("CDN", domains=[r"cdn\.test"], collect=["PacketCounters"])
    m = ServiceMap([svc])
    ans = [("www.svc.test", "CNAME", 60, "edge.cdn.test"), ("edge.cdn.test", "A", 60, "192.0.2.7")]
    assert m.ingest_dns(dns_pkt("www.svc.test", ans)) == 1
    assert m.classify(None, "192.0.2.7", T) == 0


def test_query_name_match_through_cname():
    svc = build_service("Q", domains=[r"^www\.svc\.test$"])
    m = ServiceMap([svc])
    ans = [("www.svc.test", "CNAME", 60, "edge.other.net"), ("edge.other.net", "AAAA", 60, "2001:db8::5")]
    assert m.ingest_dns(dns_pkt("www.svc.test", ans)) == 1
    assert m.classify(None, "2001:db8::5", T) == 0


def test_prefix_classification():
    m = netflix_map()
    assert m.classify(None, "23.246.0.9") == 0
    assert m.classify(None, "2a00:86c0:1::1") == 0
    assert m.classify(None, "203.0.113.1") is None


def test_expired_entry_unbinds():
    m = ServiceMap([build_service("X", domains=["x.test"])], ttl_floor=0)
    m.ingest_dns(dns_pkt("a.x.test", [("a.x.test", "A", 10, "192.0.2.1")]))
    assert m.classify(None, "192.0.2.1", T + 9 * NS) == 0
    assert m.classify(None, "192.0.2.1", T + 10 * NS) is None
    assert m.dns_table == {}  # removed lazily


def test_ttl_floor_applies():
    m = ServiceMap([build_service("X", domains=["x.test"])], ttl_floor=300)
    m.ingest_dns(dns_pkt("a.x.test", [("a.x.test", "A", 5, "192.0.2.1")]))
    (_, expiry), = m.dns_table.values()
    assert expiry == T + 300 * NS
    assert m.classify(None, "192.0.2.1", T + 299 * NS) == 0


def test_infinite_floor_never_expires():
    m = ServiceMap([build_service("X", domains=["x.test"])], ttl_floor=math.inf)
    m.ingest_dns(dns_pkt("a.x.test", [("a.x.test", "A", 0, "192.0.2.1")]))
    assert m.classify(None, "192.0.2.1", T + 10**6 * NS) == 0
    assert m.sweep(T + 10**9 * NS) == 0


def test_expiry_strictly_after_insert():
    m = ServiceMap([build_service("X", domains=["x.test"])], ttl_floor=0)
    m.ingest_dns(dns_pkt("a.x.test", [("a.x.test", "A", 0, "192.0.2.1")]))
    (_, expiry), = m.dns_table.values()
    assert expiry > T


def test_sweep_removes_expired():
    m = ServiceMap([build_service("X", domains=["x.test"])], ttl_floor=0)
    m.ingest_dns(dns_pkt("a.x.test", [("a.x.test", "A", 10, "192.0.2.1"), ("a.x.test", "A", 100, "192.0.2.2")]))
    assert m.sweep(T + 50 * NS) == 1
    assert len(m.dns_table) == 1


def test_longest_prefix_wins_against_oracle():
    rng = random.Random(11)
    services = []
    nets = []
    for i in range(30):
        plen = rng.choice([8, 12, 16, 20, 24, 28])
        base = ipaddress.ip_network(f"{rng.choice([10, 172, 192])}.{rng.randrange(4)}.{rng.randrange(256)}.0/{plen}",
                                    strict=False)
        services.append(build_service(f"S{i}", prefixes=[str(base)]))
        nets.append((base, i))
    m = ServiceMap(services)
    for _ in range(3000):
        ip = ipaddress.ip_address(f"{rng.choice([10, 172, 192])}.{rng.randrange(4)}.{rng.randrange(256)}.{rng.randrange(256)}")
        covering = [(n.prefixlen, -i, i) for n, i in nets if ip in n]
        expected = max(covering)[2] if covering else None
        assert m.classify(None, str(ip)) == expected


def test_two_services_16_vs_24():
    a = build_service("Wide", prefixes=["23.246.0.0/16"])
    b = build_service("Narrow", prefixes=["23.246.5.0/24"])
    m = ServiceMap([a, b])
    assert m.classify(None, "23.246.5.1") == 1
    assert m.classify(None, "23.246.6.1") == 0


def test_prefix_beats_dns():
    a = build_service("P", prefixes=["192.0.2.0/24"])
    b = build_service("D", domains=["d.test"])
    m = ServiceMap([a, b])
    m.ingest_dns(dns_pkt("d.test", [("d.test", "A", 300, "192.0.2.9")]))
    assert m.classify(None, "192.0.2.9", T) == 0


def test_first_service_wins_overlap():
    a = build_service("First", domains=["shared"])
    b = build_service("Second", domains=["shared"])
    m = ServiceMap([a, b])
    m.ingest_dns(dns_pkt("x.shared", [("x.shared", "A", 300, "192.0.2.3")]))
    assert m.classify(None, "192.0.2.3", T) == 0


def test_malformed_counted_and_queries_ignored():
    m = netflix_map()
    bad = decode(udp_frame("8.8.8.8", 53, "10.0.0.5", 4000, b"\x01\x02\x03"), T, LOCAL)
    assert m.ingest_dns(bad) == 0 and m.dns_malformed == 1
    q = decode(udp_frame("10.0.0.5", 4000, "8.8.8.8", 53, dns_query("foo.nflxvideo.net")), T, LOCAL)
    assert m.ingest_dns(q) == 0


def test_truncated_response_partial_ingest():
    m = netflix_map()
    payload = dns_response("a.nflxvideo.net", [("a.nflxvideo.net", "A", 300, "198.51.100.1"),
                                                ("a.nflxvideo.net", "A", 300, "198.51.100.2")])[:-2]
    pkt = decode(udp_frame("8.8.8.8", 53, "10.0.0.5", 4000, payload), T, LOCAL)
    assert m.ingest_dns(pkt) == 1
    assert m.dns_malformed == 1


def test_dump_json():
    import json
    m = netflix_map()
    m.ingest_dns(dns_pkt("foo.nflxvideo.net", [("foo.nflxvideo.net", "A", 300, "198.51.100.1")]))
    d = json.loads(m.to_json())
    assert {"prefix": "23.246.0.0/18", "service": "Netflix"} in d["prefixes"]
    assert d["dns"] == [{"ip": "198.51.100.1", "service": "Netflix", "expiry_ns": T + 300 * NS}]


@pytest.mark.parametrize("ip", ["23.246.63.255", "45.57.127.1", "208.75.79.200", "2620:10c:700f::1"])
def test_netflix_prefix_edges(ip):
    assert netflix_map().classify(None, ip) == 0
