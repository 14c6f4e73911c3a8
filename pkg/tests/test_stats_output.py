import json
import random
import statistics

from hypothesis import given
from hypothesis import strategies as st

from flowprism.output import EmitWriter, encode_record, service_file_stem
from flowprism.stats import Reservoir, StreamingStats


def test_reservoir_exact_below_capacity():
    r = Reservoir(100, seed=1)
    vals = list(range(57))
    for v in vals:
        r.add(v)
    assert r.exact and sorted(r.samples) == vals
    assert r.quantile(0.5) == statistics.median(vals)


def test_reservoir_bounded_and_seeded():
    a, b = Reservoir(64, seed=7), Reservoir(64, seed=7)
    for v in range(10_000):
        a.add(v)
        b.add(v)
    assert len(a.samples) == 64 and not a.exact and a.samples == b.samples
    assert 2_500 < a.quantile(0.5) < 7_500


def test_streaming_stats_summary():
    s = StreamingStats()
    data = [random.Random(2).randrange(1000) for _ in range(999)]
    for v in data:
        s.add(v)
    out = s.summary(cdf_points=101)
    assert out["count"] == 999 and out["min"] == min(data) and out["max"] == max(data)
    assert out["median"] == statistics.median(data)
    assert abs(out["mean"] - statistics.mean(data)) < 1e-9
    assert len(out["cdf"]) == 101 and out["cdf"][0] == min(data) and out["cdf"][-1] == max(data)
    assert StreamingStats().summary()["median"] is None


@given(st.dictionaries(st.sampled_from(["PacketCounters", "PngCopy(6,6,headers)", "VideoSegments"]),
                       st.recursive(st.none() | st.integers() | st.text(max_size=5),
                                    lambda c: st.lists(c, max_size=3) | st.dictionaries(st.text(max_size=3), c, max_size=3),
                                    max_leaves=6)))
def test_encode_record_accounts_every_byte(features):
    head = {"interval_start": 1, "interval_end": 2, "service": "S", "final": False,
            "flow": {"proto": 6, "addr_lo": "1.2.3.4", "port_lo": 1, "addr_hi": "5.6.7.8", "port_hi": 2}}
    line, sizes = encode_record(head, features)
    assert line.endswith("\n") and "\n" not in line[:-1]
    doc = json.loads(line)
    assert doc["features"] == features and doc["service"] == "S"
    for name, value in features.items():
        assert sizes[name] == len(json.dumps(value, separators=(",", ":")))


def test_writer_identity_and_rotation(tmp_path):
    w = EmitWriter(tmp_path, 1_700_000_000, rotate_mb=0.001)  # ~1 KiB files
    for i in range(50):
        w.write("Net flix", i // 10, {"interval_start": i, "service": "Net flix"},
                {"PacketCounters": {"pps_up": i}, "BytesCopy": "x" * 20})
    w.close()
    paths = w.paths()["Net flix"]
    stem = service_file_stem("Net flix", 1_700_000_000)
    assert stem == "Net_flix-1700000000"
    assert paths[0].name == f"{stem}.jsonl" and paths[1].name == f"{stem}.1.jsonl"
    assert len(paths) > 2 and all(p.stat().st_size <= 1048 for p in paths)
    file_bytes = sum(p.stat().st_size for p in paths)
    assert w.meter.total() == file_bytes
    lines = [json.loads(l) for p in paths for l in p.read_text().splitlines()]
    assert [d["interval_start"] for d in lines] == list(range(50))
    assert sum(w.meter.records["Net flix"].values()) == 50 == w.records_written
    assert set(w.meter.by_class["Net flix"]) == set(range(5))
