"""Feature-class contract and name registry.

A feature class is a per-flow state object with two hooks: ``add_packet``
updates the state from one decoded packet, ``collect`` turns the state into an
output value when an emit interval closes. ``approximate_size`` feeds the
state-cost profiler.

Feature references in configuration files are plain names (``PacketCounters``)
or parameterised names (``PngCopy(28,28,headers)``). Names are case-sensitive.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass
from typing import Any, Callable, ClassVar

WORD = 8

_REF_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\((.*)\))?\s*$")


class UnknownFeatureError(ValueError):
    def __init__(self, name: str, registered: list[str]):
        self.name = name
        self.registered = registered
        super().__init__(
            f"unknown feature class {name!r}; registered: {', '.join(registered)}"
        )


class FeatureArgumentError(ValueError):
    pass


class FeatureState:
    """Base class for per-flow feature state.

    Subclasses set ``name`` and implement the three hooks. ``from_args`` parses
    the positional arguments of a parameterised reference.
    """

    name: ClassVar[str] = ""
    __slots__ = ()

    @classmethod
    def from_args(cls, args: list[str]) -> Callable[[], "FeatureState"]:
        if args:
            raise FeatureArgumentError(f"{cls.name} takes no arguments")
        return cls

    def add_packet(self, pkt) -> None:
        raise NotImplementedError

    def collect(self, slot_size: float, final: bool = False) -> Any:
        raise NotImplementedError

    def approximate_size(self) -> int:
        raise NotImplementedError


_REGISTRY: dict[str, type[FeatureState]] = {}


def register(cls: type[FeatureState]) -> type[FeatureState]:
    if not cls.name:
        raise ValueError("feature class needs a name")
    if cls.name in _REGISTRY and _REGISTRY[cls.name] is not cls:
        raise ValueError(f"feature class {cls.name!r} already registered")
    _REGISTRY[cls.name] = cls
    return cls


def registered_names() -> list[str]:
    return sorted(_REGISTRY)


@dataclass(frozen=True)
class FeatureRef:
    """A parsed, validated reference to a feature class.

    ``text`` is the canonical spelling and doubles as the output key.
    """

    name: str
    args: tuple[str, ...]
    factory: Callable[[], FeatureState]

    @property
    def text(self) -> str:
        if not self.args:
            return self.name
        return f"{self.name}({','.join(self.args)})"

    def build(self) -> FeatureState:
        return self.factory()


def registry_lookup(text: str) -> FeatureRef:
    """Resolve a feature reference string to a constructor.

    Raises UnknownFeatureError for names not in the registry and
    FeatureArgumentError for malformed arguments.
    """
    m = _REF_RE.match(text) if isinstance(text, str) else None
    if m is None:
        raise UnknownFeatureError(str(text), registered_names())
    name, raw_args = m.group(1), m.group(2)
    cls = _REGISTRY.get(name)
    if cls is None:
        raise UnknownFeatureError(name, registered_names())
    args: tuple[str, ...] = ()
    if raw_args is not None and raw_args.strip():
        args = tuple(a.strip() for a in raw_args.split(","))
        if any(not a for a in args):
            raise FeatureArgumentError(f"empty argument in {text!r}")
    factory = cls.from_args(list(args))
    return FeatureRef(name=name, args=args, factory=factory)


def container_size(obj) -> int:
    """Allocated size of a container (capacity, not length)."""
    return sys.getsizeof(obj)
