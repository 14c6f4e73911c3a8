import json
import os
import signal
import socket
import threading
import time

import pytest

from framegen import tcp_frame, udp_frame
from flowprism.capture import AfPacketSource, CaptureError, FrameFeedSource
from flowprism.config import parse_config
from flowprism.pipeline import run_live

from traces import NS, T0, config_json, service


class FakeClock:
    def __init__(self, t=T0):
        self.t = t

    def __call__(self):
        return self.t


def scripted(clock, items):
    """Yield (step_ns, frame) items, advancing the fake clock before each."""
    for step, frame in items:
        clock.t += step
        yield (clock.t, frame, len(frame)) if frame is not None else None


def lines(result):
    return [json.loads(l) for ps in result.outputs.values() for p in ps for l in p.read_text().splitlines()]


def two_service_cfg(**system):
    return parse_config(config_json([service("Fast", prefixes=["23.246.0.0/16"], emit=2),
                                     service("Slow", prefixes=["45.57.0.0/16"], emit=10)], **system))


def test_independent_timers_interleaved(tmp_path):
    clock = FakeClock()
    fa = tcp_frame("10.0.0.5", 4000, "23.246.0.9", 443, flags="A")
    fb = udp_frame("10.0.0.6", 5000, "45.57.0.1", 443, b"q")
    items = [(NS // 2, fa if i % 2 else fb) for i in range(130)]
    r = run_live(two_service_cfg(Workers=2), source=scripted(clock, items), output_directory=tmp_path,
                 duration=30, clock=clock)
    got = lines(r)
    assert r.completed_cycles == {"Fast": 15, "Slow": 3}
    fast = [g for g in got if g["service"] == "Fast" and not g["final"]]
    slow = [g for g in got if g["service"] == "Slow" and not g["final"]]
    assert len(fast) == 15 and len(slow) == 3
    assert all(g["interval_end"] - g["interval_start"] == 2 * NS for g in fast)
    both = sorted(fast + slow, key=lambda g: g["interval_end"])
    assert {g["service"] for g in both[:5]} == {"Fast"} and "Slow" in {g["service"] for g in both}
    assert r.run_end == T0 + 30 * NS
    assert r.counters.packets_dropped == 0


def test_sixty_seconds_six_cycles(tmp_path):
    clock = FakeClock()
    f = tcp_frame("10.0.0.5", 4000, "23.246.0.9", 443, flags="A")
    items = [(NS // 4, f) for _ in range(260)]
    cfg = parse_config(config_json([service("S", prefixes=["23.246.0.0/16"], emit=10)]))
    r = run_live(cfg, source=scripted(clock, items), output_directory=tmp_path, duration=60, clock=clock)
    assert r.completed_cycles == {"S": 6}
    interval = [g for g in lines(r) if not g["final"]]
    assert len(interval) == 6
    total = sum(g["features"]["PacketCounters"]["pps_up"] * 10 for g in interval)
    assert round(total) == r.counters.packets_processed == 239  # packets stamped before the deadline


def test_sigint_flushes_and_reports(tmp_path):
    f = tcp_frame("10.0.0.5", 4000, "23.246.0.9", 443, flags="A")
    src = FrameFeedSource([f] * 50, idle_tail=30.0)
    cfg = parse_config(config_json([service(emit=1)]))
    timer = threading.Timer(1.5, os.kill, (os.getpid(), signal.SIGINT))
    timer.start()
    t = time.monotonic()
    try:
        r = run_live(cfg, source=src, output_directory=tmp_path)
    finally:
        timer.cancel()
    assert time.monotonic() - t < 10
    assert r.counters.packets_processed == 50
    got = lines(r)
    assert got and got[-1]["final"] is True
    assert signal.getsignal(signal.SIGINT) is signal.default_int_handler


def test_stop_event(tmp_path):
    ev = threading.Event()
    f = udp_frame("10.0.0.5", 4000, "1.1.1.1", 53, b"x" * 20)

    def frames():
        for i in range(20):
            if i == 10:
                ev.set()
            yield f
    r = run_live(parse_config(config_json([service()])), source=FrameFeedSource(frames()),
                 output_directory=tmp_path, stop_event=ev)
    assert r.counters.packets_read == 10


def test_overload_drops_and_stays_live(tmp_path):
    clock = FakeClock()
    f = tcp_frame("10.0.0.5", 4000, "23.246.0.9", 443, flags="A")
    items = [(NS // 100, f) for _ in range(400)]
    cfg = parse_config(config_json([service(emit=1)], Workers=1, QueueSize=4))
    r = run_live(cfg, source=scripted(clock, items), output_directory=tmp_path, clock=clock,
                 worker_hook=lambda pkt: time.sleep(0.002))
    c = r.counters
    assert c.packets_dropped > 0
    assert c.packets_processed + c.packets_dropped == c.packets_read == 400
    assert lines(r)


def test_worker_failure_surfaces(tmp_path):
    def boom(pkt):
        raise ValueError("injected")
    f = tcp_frame("10.0.0.5", 4000, "23.246.0.9", 443, flags="A")
    with pytest.raises(RuntimeError, match="injected"):
        run_live(parse_config(config_json([service()], Workers=1)), source=FrameFeedSource([f]),
                 output_directory=tmp_path, worker_hook=boom)


def test_af_packet_loopback(tmp_path):
    try:
        src = AfPacketSource("lo", timeout=0.05)
    except CaptureError as exc:
        pytest.skip(f"raw capture unavailable: {exc}")
    cfg = parse_config(config_json([service(prefixes=["127.0.0.0/8"], emit=1)], LocalPrefixes=["10.0.0.0/8"]))

    def send():
        s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        for _ in range(20):
            s.sendto(b"ping", ("127.0.0.1", 9))
            time.sleep(0.02)
        s.close()
    threading.Thread(target=send, daemon=True).start()
    r = run_live(cfg, source=src, output_directory=tmp_path, duration=1.5)
    assert r.counters.packets_read >= 20
