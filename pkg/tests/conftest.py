import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def local_nets():
    from flowprism.packet import LocalNetworks
    return LocalNetworks(["10.0.0.0/8", "fd00::/8"])


# -- acceptance table --------------------------------------------------------

CRITERIA = {
    "c01": "1 counter conservation",
    "c02": "2 video segments exact",
    "c03": "3 QUIC header threshold",
    "c04": "4 PNG losslessness",
    "c05": "5 storage ordering (>= 50 MB fixture)",
    "c06": "6 PNG below raw bytes",
    "c07": "7 processing ordering",
    "c08": "8 cache insert/update asymmetry",
    "c09": "9 idle eviction",
    "c10": "10 determinism",
    "c11": "11 classification fixtures",
    "c12": "12 throughput floor (informational)",
}
_acceptance: dict[str, list] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_c" not in report.nodeid:
        return
    if report.when != "call" and not (report.failed or report.skipped):
        return
    tag = report.nodeid.split("::test_")[1][:3]
    props = dict(report.user_properties)
    outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    _acceptance.setdefault(tag, []).append((outcome, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for tag, label in CRITERIA.items():
        results = _acceptance.get(tag)
        if not results:
            continue
        outs = {o for o, _ in results}
        outcome = "FAIL" if "FAIL" in outs else next(iter(outs)) if len(outs) == 1 else "PASS"
        detail = "; ".join(d for _, d in results if d)
        tr.write_line(f"{outcome:<5} criterion {label}" + (f"  [{detail}]" if detail else ""))
