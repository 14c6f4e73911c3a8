"""Feature classes. Importing this package registers all built-ins."""

from .base import (
    FeatureArgumentError,
    FeatureRef,
    FeatureState,
    UnknownFeatureError,
    register,
    registered_names,
    registry_lookup,
)
from .counters import PacketCounters, PacketTimes
from .rawbytes import BytesCopy, PngCopy
from .tcp import LatencyCounters, TCPCounters
from .video import QUIC_HEADER_LEN, VideoSegment, VideoSegments


def collect_all(record, slot_size: float, final: bool = False) -> dict:
    """Collect every feature state of a flow record into a name->output map."""
    return {
        name: state.collect(slot_size, final)
        for name, state in zip(record.feature_names, record.feature_states)
    }


__all__ = [
    "BytesCopy", "FeatureArgumentError", "FeatureRef", "FeatureState", "LatencyCounters",
    "PacketCounters", "PacketTimes", "PngCopy", "QUIC_HEADER_LEN", "TCPCounters",
    "UnknownFeatureError", "VideoSegment", "VideoSegments", "collect_all", "register",
    "registered_names", "registry_lookup",
]
