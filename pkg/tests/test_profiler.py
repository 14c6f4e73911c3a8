import json

import pytest

from framegen import tcp_frame, write_pcap
from flowprism import profiler
from flowprism.config import parse_config
from flowprism.features import BytesCopy
from flowprism.flowcache import FlowRecord
from flowprism.packet import FlowKey
from flowprism.pipeline import run_replay
from flowprism.profiler import (
    ReportMismatchError,
    check_config,
    classify_trace,
    compare_reports,
    load_report,
    profile_processing,
    profile_run,
    profile_state,
    strip_timing,
)
from flowprism.features import registry_lookup

from test_live import FakeClock, scripted
from traces import NS, T0, config_json, header_repetitive_trace, mixed_trace, service, short_flow_trace


def cfg_for(pcap, collect, emit=10, **system):
    return parse_config(config_json([service(collect=collect, emit=emit)], **system)).with_capture(pcap=str(pcap))


@pytest.fixture(scope="module")
def mixed_pcap(mixed):
    return mixed[0]


@pytest.fixture(scope="module")
def mixed(tmp_path_factory):
    p = tmp_path_factory.mktemp("prof") / "mixed.pcap"
    tr = mixed_trace(3000, seed=12, duration_s=35)
    tr.write(p)
    ts = [t for t, _ in tr.records]
    return p, max(ts) - min(ts)


def test_profile_state_lower_bound():
    ref = registry_lookup("BytesCopy(784,headers)")
    recs = []
    for i in range(100):
        r = FlowRecord(FlowKey(6, i, i + 1, 1, 2), 0, T0, None, [ref])
        st = r.feature_states[0]
        st._allocate()
        st.filled = 784
        recs.append(r)
    assert profile_state(recs)["BytesCopy(784,headers)"] >= 78_400
    assert profile_state([]) == {}


def test_report_shape_and_series_lengths(tmp_path, mixed):
    mixed_pcap, span = mixed
    cfg = cfg_for(mixed_pcap, ["PacketCounters", "PacketTimes", "BytesCopy(100,both)"], emit=5)
    rep = profile_run(cfg, output_directory=tmp_path / "o")
    n = rep["metadata"]["completed_cycles"]["All"]
    assert n == span // (5 * NS) > 0
    assert rep["schema_version"] == 1 and rep["metadata"]["config_hash"] == cfg.config_hash()
    assert rep["metadata"]["trace"]["id"] == profiler.trace_id(mixed_pcap)
    for name, e in rep["classes"].items():
        assert len(e["state_bytes_per_cycle"]) == n == len(e["storage_bytes_per_cycle"])
        assert e["storage_bytes_total"] == sum(e["storage_bytes_per_cycle"]) + e["storage_final_bytes"]
        assert e["add_packet_ns"]["count"] == rep["run"]["packets_processed"]
        assert len(e["add_packet_cdf_ns"]) == 101
    assert rep["storage"]["identity_holds"]
    assert rep["storage"]["class_bytes"] + rep["storage"]["framing_bytes"] == rep["storage"]["file_bytes"]
    json.dumps(rep)


def test_count_equals_packets_routed(tmp_path, mixed_pcap):
    cfg = parse_config(config_json([service("V4", prefixes=["0.0.0.0/0"], collect=["PacketCounters"]),
                                    service("V6", prefixes=["::/0"], collect=["TCPCounters"])]))
    cfg = cfg.with_capture(pcap=str(mixed_pcap))
    routed = {0: 0, 1: 0}
    run_replay(cfg, tmp_path / "a", on_packet=lambda p, k, r: routed.__setitem__(r.service, routed[r.service] + 1)
               if r is not None and r.service is not None else None)
    rep = profile_run(cfg, output_directory=tmp_path / "b")
    assert rep["classes"]["PacketCounters"]["add_packet_ns"]["count"] == routed[0]
    assert rep["classes"]["TCPCounters"]["add_packet_ns"]["count"] == routed[1]
    assert routed[0] and routed[1]


def test_replay_reports_deterministic(tmp_path, mixed_pcap):
    cfg = cfg_for(mixed_pcap, ["PacketCounters", "PngCopy(6,6,headers)"], emit=4)
    a = profile_run(cfg, output_directory=tmp_path / "a")
    b = profile_run(cfg, output_directory=tmp_path / "b")
    assert strip_timing(a) == strip_timing(b)
    assert "add_packet_ns" in a["classes"]["PacketCounters"]
    assert "add_packet_ns" not in strip_timing(a)["classes"]["PacketCounters"]


def test_png_state_exceeds_bytes_copy(tmp_path):
    pcap = tmp_path / "h.pcap"
    header_repetitive_trace(300, pkts=40).write(pcap)  # spans ~1.5 s, one full cycle
    cfg = cfg_for(pcap, ["BytesCopy(784,headers)", "PngCopy(28,28,headers)"], emit=1)
    rep = profile_run(cfg, output_directory=tmp_path / "o", processing=False)
    b = rep["classes"]["BytesCopy(784,headers)"]["state_bytes_per_cycle"]
    p = rep["classes"]["PngCopy(28,28,headers)"]["state_bytes_per_cycle"]
    assert max(b) > 0
    assert max(p) >= 1.5 * max(b)


def test_png_storage_below_raw(tmp_path):
    pcap = tmp_path / "h.pcap"
    header_repetitive_trace(100, pkts=40).write(pcap)
    cfg = cfg_for(pcap, ["BytesCopy(784,headers)", "PngCopy(28,28,headers)"], emit=2)
    rep = profile_run(cfg, output_directory=tmp_path / "o", processing=False)
    c = rep["classes"]
    assert c["PngCopy(28,28,headers)"]["storage_bytes_total"] < c["BytesCopy(784,headers)"]["storage_bytes_total"]


def test_idle_interval_only_framing(tmp_path):
    f = tcp_frame("10.0.0.5", 1, "23.246.0.9", 443, flags="A")
    write_pcap(tmp_path / "i.pcap", [(T0, f), (T0 + 25 * NS, f)])
    cfg = cfg_for(tmp_path / "i.pcap", ["BytesCopy(100,headers)"], emit=10)
    rep = profile_run(cfg, output_directory=tmp_path / "o", processing=False)
    e = rep["classes"]["BytesCopy(100,headers)"]
    # one flow, buffer not full: each interval emits a null value ("null" = 4 bytes) plus framing
    assert e["storage_bytes_per_cycle"] == [4, 4]
    assert rep["storage"]["framing_per_cycle"]["All"][0] > 0
    assert rep["storage"]["identity_holds"]


def test_rate_state_returns_to_baseline(tmp_path, mixed_pcap):
    cfg = cfg_for(mixed_pcap, ["PacketCounters", "PacketTimes"], emit=5)
    rep = profile_run(cfg, output_directory=tmp_path / "o", processing=False)
    pc = rep["classes"]["PacketCounters"]
    assert pc["state_bytes_after_collect"] == pc["state_bytes_per_cycle"]
    pt = rep["classes"]["PacketTimes"]
    assert all(a <= b for a, b in zip(pt["state_bytes_after_collect"], pt["state_bytes_per_cycle"]))
    assert sum(pt["state_bytes_after_collect"]) < sum(pt["state_bytes_per_cycle"])


def test_isolation_outputs_unchanged(tmp_path, mixed_pcap):
    def counters(collect, name):
        r = run_replay(cfg_for(mixed_pcap, collect, emit=5), tmp_path / name)
        return [json.loads(l)["features"]["PacketCounters"]
                for ps in r.outputs.values() for p in ps for l in p.read_text().splitlines()]
    assert counters(["PacketCounters"], "a") == counters(["PacketCounters", "PngCopy(28,28,both)", "LatencyCounters"], "b")


def test_short_flows_cost_more_than_long(tmp_path):
    tr = short_flow_trace(300, long_flows=6, long_len=150)
    cfg = parse_config(config_json([service(collect=["PngCopy(28,28,headers)"])]))
    ct = classify_trace(cfg, ((ts, f, len(f)) for ts, f in tr.records))
    res = profile_processing(cfg, ct)["PngCopy(28,28,headers)"]
    by = res["add_packet_by_flow_length"]
    assert by["short_le_5"]["count"] > 0 and by["long_ge_100"]["count"] == 6 * 150
    assert by["short_le_5"]["mean"] > by["long_ge_100"]["mean"]


def test_zero_packet_trace(tmp_path):
    write_pcap(tmp_path / "e.pcap", [])
    cfg = cfg_for(tmp_path / "e.pcap", ["PacketCounters"])
    res = profile_processing(cfg, profiler.PcapFileSource(cfg.capture_pcap))
    assert res["PacketCounters"]["add_packet_ns"]["count"] == 0
    assert res["PacketCounters"]["add_packet_ns"]["median"] is None
    rep = profile_run(cfg, output_directory=tmp_path / "o")
    assert rep["classes"]["PacketCounters"]["state_bytes_per_cycle"] == []


def test_live_sixty_seconds_six_cycles(tmp_path):
    clock = FakeClock()
    f = tcp_frame("10.0.0.5", 4000, "23.246.0.9", 443, flags="A", payload=b"p")
    items = [(NS // 4, f) for _ in range(260)]
    cfg = parse_config(config_json([service(collect=["PacketCounters", "BytesCopy(36,payload)"], emit=10)]))
    import flowprism.pipeline as pl
    orig = pl.run_live

    def fake_live(*a, **kw):
        kw["clock"] = clock
        return orig(*a, **kw)
    profiler.run_live, saved = fake_live, profiler.run_live
    try:
        rep = profile_run(cfg, mode="live", duration=60, source=scripted(clock, items),
                          output_directory=tmp_path / "o")
    finally:
        profiler.run_live = saved
    for e in rep["classes"].values():
        assert len(e["state_bytes_per_cycle"]) == 6 == len(e["storage_bytes_per_cycle"])
        assert e["add_packet_ns"]["count"] == 239
    assert rep["metadata"]["mode"] == "live"


def test_compare_refuses_hash_mismatch(tmp_path, mixed_pcap):
    a = profile_run(cfg_for(mixed_pcap, ["PacketCounters"], emit=5), output_directory=tmp_path / "a")
    b = profile_run(cfg_for(mixed_pcap, ["PacketCounters"], emit=6), output_directory=tmp_path / "b")
    with pytest.raises(ReportMismatchError):
        compare_reports(a, b)
    same = compare_reports(a, a)
    pc = same["classes"]["PacketCounters"]
    assert pc["state_series_equal"] and pc["median_ratio"] == 1
    with pytest.raises(ReportMismatchError):
        check_config(a, cfg_for(mixed_pcap, ["TCPCounters"]))
    check_config(a, cfg_for(mixed_pcap, ["PacketCounters"], emit=5, OutputDirectory="elsewhere"))


def test_load_report_schema_guard(tmp_path):
    p = tmp_path / "r.json"
    p.write_text(json.dumps({"schema_version": 99}))
    with pytest.raises(ReportMismatchError):
        load_report(p)


def test_coarse_timer_warning(tmp_path, mixed_pcap, monkeypatch):
    monkeypatch.setattr(profiler, "_timer_info", lambda: {"clock": "x", "resolution_ns": 1000.0,
                                                          "monotonic": True, "calibration_overhead_ns": 50})
    rep = profile_run(cfg_for(mixed_pcap, ["PacketCounters"]), output_directory=tmp_path / "o", processing=False)
    assert any("resolution" in w for w in rep["metadata"]["warnings"])
    assert rep["metadata"]["timer"]["calibration_overhead_ns"] == 50


def test_timer_calibration_reported():
    info = profiler._timer_info()
    assert info["monotonic"] and info["calibration_overhead_ns"] >= 0


def test_bytescopy_class_imported():
    assert BytesCopy.default_size == 784
