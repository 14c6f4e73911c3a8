"""JSON configuration: system settings plus service classes.

Layout::

    {
      "System":   {"Pcap": "...", "LocalPrefixes": [...], "Workers": 4, ...},
      "Services": [{"Name": ..., "Filter": {"DomainsString": [...],
                    "Prefixes": [...]}, "Collect": [...], "Emit": 10}]
    }

Unknown keys are rejected at every level.
"""

from __future__ import annotations

import dataclasses
import hashlib
import ipaddress
import json
import math
import re
from dataclasses import dataclass, field
from typing import Any

from .features import FeatureRef, registry_lookup
from .features.base import FeatureArgumentError, UnknownFeatureError

DEFAULT_LOCAL_PREFIXES = ("10.0.0.0/8", "172.16.0.0/12", "192.168.0.0/16", "fc00::/7")

_SYSTEM_KEYS = {
    "Interface": "capture_interface",
    "Pcap": "capture_pcap",
    "LocalPrefixes": "local_prefixes",
    "Workers": "worker_count",
    "FlowIdleTimeout": "flow_idle_timeout",
    "OutputDirectory": "output_directory",
    "DNSTTLFloor": "dns_ttl_floor",
    "MaxFlows": "max_flows",
    "StoreUnclassified": "store_unclassified",
    "RotateMB": "rotate_mb",
    "QueueSize": "queue_size",
}
_SERVICE_KEYS = {"Name", "Filter", "Collect", "Emit"}
_FILTER_KEYS = {"DomainsString", "Prefixes"}
_TOP_KEYS = {"System", "Services"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ServiceClassSpec:
    name: str
    domains: tuple[str, ...] = ()
    prefixes: tuple[str, ...] = ()
    collect: tuple[str, ...] = ()
    emit_interval: int = 10
    patterns: tuple[re.Pattern, ...] = field(default=(), compare=False, repr=False)
    networks: tuple = field(default=(), compare=False, repr=False)
    features: tuple[FeatureRef, ...] = field(default=(), compare=False, repr=False)

    def matches_name(self, qname: str) -> bool:
        return any(p.search(qname) for p in self.patterns)


@dataclass(frozen=True)
class RuntimeConfig:
    capture_interface: str | None = None
    capture_pcap: str | None = None
    local_prefixes: tuple[str, ...] = DEFAULT_LOCAL_PREFIXES
    worker_count: int = 4
    flow_idle_timeout: int = 600
    output_directory: str = "out"
    dns_ttl_floor: float = 300.0
    max_flows: int = 2_000_000
    store_unclassified: bool = True
    rotate_mb: float = 64.0
    queue_size: int = 65536
    service_classes: tuple[ServiceClassSpec, ...] = ()

    @property
    def capture_source(self) -> str | None:
        return self.capture_interface or self.capture_pcap

    def with_capture(self, *, interface: str | None = None, pcap: str | None = None) -> "RuntimeConfig":
        """Return a copy whose capture source is exactly the one given."""
        if (interface is None) == (pcap is None):
            raise ConfigError("exactly one capture source (interface or pcap) must be set")
        return dataclasses.replace(self, capture_interface=interface, capture_pcap=pcap)

    def require_capture(self) -> None:
        if (self.capture_interface is None) == (self.capture_pcap is None):
            raise ConfigError("exactly one capture source (Interface or Pcap) must be set")

    def service(self, name: str) -> ServiceClassSpec:
        for s in self.service_classes:
            if s.name == name:
                return s
        raise KeyError(name)

    def config_hash(self) -> str:
        """Digest of everything that shapes measurements.

        Capture source and output directory are left out so that two runs of
        the same plan over different traces or into different folders compare.
        """
        plan = config_to_dict(dataclasses.replace(self, capture_interface=None, capture_pcap=None,
                                                  output_directory="."))
        return hashlib.sha256(json.dumps(plan, sort_keys=True).encode()).hexdigest()[:16]


def _fail(msg: str) -> None:
    raise ConfigError(msg)


def _check_keys(obj: Any, allowed, where: str) -> dict:
    if not isinstance(obj, dict):
        _fail(f"{where}: expected an object, got {type(obj).__name__}")
    extra = sorted(set(obj) - set(allowed))
    if extra:
        _fail(f"{where}: unknown key(s) {', '.join(map(repr, extra))}")
    return obj


def _positive_int(value, where: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        _fail(f"{where}: expected an integer >= {minimum}, got {value!r}")
    return value


def _string_list(value, where: str) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        _fail(f"{where}: expected a list of strings")
    return value


def _canonical_prefix(text: str, where: str) -> tuple[str, Any]:
    try:
        net = ipaddress.ip_network(text.strip(), strict=False)
    except ValueError as exc:
        _fail(f"{where}: invalid CIDR prefix {text!r} ({exc})")
    return str(net), net


def build_service(name: str, domains=(), prefixes=(), collect=(), emit_interval: int = 10,
                  where: str | None = None) -> ServiceClassSpec:
    """Validate and compile one service class."""
    where = where or f"service {name!r}"
    if not isinstance(name, str) or not name.strip():
        _fail(f"{where}: Name must be a non-empty string")
    patterns = []
    for d in domains:
        try:
            patterns.append(re.compile(d, re.IGNORECASE))
        except re.error as exc:
            _fail(f"{where}: invalid domain pattern {d!r} ({exc})")
    canon, nets = [], []
    for p in prefixes:
        c, n = _canonical_prefix(p, where)
        canon.append(c)
        nets.append(n)
    refs = []
    for c in collect:
        try:
            refs.append(registry_lookup(c))
        except UnknownFeatureError as exc:
            _fail(f"{where}: unknown feature class {exc.name!r} (registered: {', '.join(exc.registered)})")
        except FeatureArgumentError as exc:
            _fail(f"{where}: {exc}")
    texts = [r.text for r in refs]
    if len(set(texts)) != len(texts):
        _fail(f"{where}: duplicate entry in Collect")
    _positive_int(emit_interval, f"{where}: Emit")
    return ServiceClassSpec(
        name=name, domains=tuple(domains), prefixes=tuple(canon), collect=tuple(texts),
        emit_interval=emit_interval, patterns=tuple(patterns), networks=tuple(nets),
        features=tuple(refs),
    )


def _parse_service(obj: Any, idx: int) -> ServiceClassSpec:
    where = f"Services[{idx}]"
    _check_keys(obj, _SERVICE_KEYS, where)
    for k in ("Name", "Collect", "Emit"):
        if k not in obj:
            _fail(f"{where}: missing {k!r}")
    name = obj["Name"]
    if isinstance(name, str):
        where = f"{where} ({name!r})"
    filt = _check_keys(obj.get("Filter", {}), _FILTER_KEYS, f"{where}.Filter")
    domains = _string_list(filt.get("DomainsString", []), f"{where}.Filter.DomainsString")
    prefixes = _string_list(filt.get("Prefixes", []), f"{where}.Filter.Prefixes")
    collect = _string_list(obj["Collect"], f"{where}.Collect")
    return build_service(name, domains, prefixes, collect, obj["Emit"], where=where)


def _parse_system(obj: Any) -> dict:
    _check_keys(obj, _SYSTEM_KEYS, "System")
    out: dict[str, Any] = {}
    for key, value in obj.items():
        attr = _SYSTEM_KEYS[key]
        where = f"System.{key}"
        if attr in ("capture_interface", "capture_pcap", "output_directory"):
            if value is not None and (not isinstance(value, str) or not value):
                _fail(f"{where}: expected a non-empty string")
        elif attr == "local_prefixes":
            value = tuple(_canonical_prefix(p, where)[0] for p in _string_list(value, where))
        elif attr in ("worker_count", "flow_idle_timeout", "max_flows", "queue_size"):
            _positive_int(value, where)
        elif attr == "dns_ttl_floor":
            # null means mappings never expire
            if value is None:
                value = math.inf
            elif isinstance(value, bool) or not isinstance(value, (int, float)) or value < 0:
                _fail(f"{where}: expected a non-negative number or null")
            value = float(value)
        elif attr == "store_unclassified":
            if not isinstance(value, bool):
                _fail(f"{where}: expected true/false")
        elif attr == "rotate_mb":
            if isinstance(value, bool) or not isinstance(value, (int, float)) or value <= 0:
                _fail(f"{where}: expected a positive number")
            value = float(value)
        out[attr] = value
    if out.get("capture_interface") and out.get("capture_pcap"):
        _fail("System: set either Interface or Pcap, not both")
    return out


def parse_config(raw_text: str | bytes) -> RuntimeConfig:
    """Parse and fully validate a configuration document.

    Raises ConfigError with a position for syntax errors and a named offender
    for semantic ones. The capture source may be absent from the file; it is
    then supplied on the command line (see RuntimeConfig.with_capture).
    """
    if isinstance(raw_text, bytes):
        try:
            raw_text = raw_text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigError(f"config is not valid UTF-8 (byte {exc.start})") from None
    try:
        doc = json.loads(raw_text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"JSON syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    _check_keys(doc, _TOP_KEYS, "config")
    system = _parse_system(doc.get("System", {}))
    services_raw = doc.get("Services", [])
    if not isinstance(services_raw, list):
        _fail("Services: expected a list")
    services = tuple(_parse_service(s, i) for i, s in enumerate(services_raw))
    names = [s.name for s in services]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        _fail(f"duplicate service name(s): {', '.join(map(repr, dupes))}")
    return RuntimeConfig(service_classes=services, **system)


def load_config(path) -> RuntimeConfig:
    with open(path, "rb") as fh:
        return parse_config(fh.read())


def config_to_dict(cfg: RuntimeConfig) -> dict:
    system: dict[str, Any] = {}
    for key, attr in _SYSTEM_KEYS.items():
        value = getattr(cfg, attr)
        if attr in ("capture_interface", "capture_pcap") and value is None:
            continue
        if attr == "local_prefixes":
            value = list(value)
        if attr == "dns_ttl_floor" and math.isinf(value):
            value = None
        system[key] = value
    services = [
        {
            "Name": s.name,
            "Filter": {"DomainsString": list(s.domains), "Prefixes": list(s.prefixes)},
            "Collect": list(s.collect),
            "Emit": s.emit_interval,
        }
        for s in cfg.service_classes
    ]
    return {"System": system, "Services": services}


def serialize_config(cfg: RuntimeConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=False)
