"""JSON-lines emit records, one file series per service class.

Files are named ``<service>-<start-epoch>.jsonl`` and rotate to
``<service>-<start-epoch>.<n>.jsonl`` once they would exceed the rotation
size. Every line is also accounted for by the storage meter: the bytes of
each feature's serialized value, plus the framing (everything else on the
line, newline included).
"""

from __future__ import annotations

import json
import os
import re
import threading
from collections import defaultdict
from pathlib import Path

NS = 1_000_000_000
_SAFE = re.compile(r"[^A-Za-z0-9_.-]+")


def _dumps(value) -> str:
    return json.dumps(value, separators=(",", ":"))


def encode_record(head: dict, features: dict) -> tuple[str, dict[str, int]]:
    """Serialize one record; returns (line, per-feature byte counts)."""
    encoded = [(name, _dumps(value)) for name, value in features.items()]
    sizes = {name: len(enc) for name, enc in encoded}
    body = ",".join(f"{_dumps(name)}:{enc}" for name, enc in encoded)
    line = f'{_dumps(head)[:-1]},"features":{{{body}}}}}\n'
    return line, sizes


def service_file_stem(service: str, start_epoch: int) -> str:
    return f"{_SAFE.sub('_', service)}-{start_epoch}"


class StorageMeter:
    """Bytes written per service, cycle and feature class."""

    def __init__(self):
        # service -> cycle -> feature -> bytes
        self.by_class: dict[str, dict[int, dict[str, int]]] = defaultdict(lambda: defaultdict(lambda: defaultdict(int)))
        self.framing: dict[str, dict[int, int]] = defaultdict(lambda: defaultdict(int))
        self.records: dict[str, dict[int, int]] = defaultdict(lambda: defaultdict(int))

    def add(self, service: str, cycle: int, sizes: dict[str, int], line_len: int) -> None:
        per = self.by_class[service][cycle]
        for name, n in sizes.items():
            per[name] += n
        self.framing[service][cycle] += line_len - sum(sizes.values())
        self.records[service][cycle] += 1

    def total(self) -> int:
        cls = sum(n for cycles in self.by_class.values() for per in cycles.values() for n in per.values())
        return cls + sum(n for cycles in self.framing.values() for n in cycles.values())


class _ServiceFile:
    def __init__(self, directory: Path, stem: str, rotate_bytes: int):
        self.directory = directory
        self.stem = stem
        self.rotate_bytes = rotate_bytes
        self.part = 0
        self.paths: list[Path] = []
        self.size = 0
        self.fh = None

    def _open(self):
        name = f"{self.stem}.jsonl" if self.part == 0 else f"{self.stem}.{self.part}.jsonl"
        path = self.directory / name
        self.fh = open(path, "w", encoding="ascii", newline="\n")
        self.paths.append(path)
        self.size = 0

    def write(self, line: str) -> None:
        if self.fh is None:
            self._open()
        elif self.size and self.size + len(line) > self.rotate_bytes:
            self.fh.close()
            self.part += 1
            self._open()
        self.fh.write(line)
        self.size += len(line)

    def close(self) -> None:
        if self.fh is not None:
            self.fh.close()
            self.fh = None


class EmitWriter:
    def __init__(self, directory, start_epoch: int, rotate_mb: float = 64.0):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.start_epoch = start_epoch
        self.rotate_bytes = max(1, int(rotate_mb * 1024 * 1024))
        self.meter = StorageMeter()
        self._files: dict[str, _ServiceFile] = {}
        self._lock = threading.Lock()
        self.records_written = 0

    def write(self, service: str, cycle: int, head: dict, features: dict) -> None:
        line, sizes = encode_record(head, features)
        with self._lock:
            f = self._files.get(service)
            if f is None:
                f = self._files[service] = _ServiceFile(
                    self.directory, service_file_stem(service, self.start_epoch), self.rotate_bytes)
            f.write(line)
            self.meter.add(service, cycle, sizes, len(line))
            self.records_written += 1

    def paths(self) -> dict[str, list[Path]]:
        return {s: list(f.paths) for s, f in self._files.items()}

    def flush(self) -> None:
        with self._lock:
            for f in self._files.values():
                if f.fh is not None:
                    f.fh.flush()
                    os.fsync(f.fh.fileno())

    def close(self) -> None:
        with self._lock:
            for f in self._files.values():
                f.close()
