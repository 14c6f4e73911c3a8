"""Raw-byte flow representations for deep-learning classifiers.

``BytesCopy(size,layers)`` copies the first ``size`` bytes of a flow from the
selected layers (``headers``, ``payload`` or ``both``; with ``both`` each
packet contributes its headers, then its payload). ``PngCopy(W,H,layers)``
acquires ``W*H`` bytes the same way and turns them into a grayscale PNG: each
scanline is filtered as soon as it fills and the image is deflated once the
buffer is complete. Both emit their buffer once, base64 encoded; flows that
end short are zero-padded and flagged ``truncated``.
"""

from __future__ import annotations

import base64

from .. import png
from .base import WORD, FeatureArgumentError, FeatureState, container_size, register

LAYERS = ("headers", "payload", "both")


def _parse_layers(value: str, owner: str) -> str:
    if value not in LAYERS:
        raise FeatureArgumentError(f"{owner} layers must be one of {', '.join(LAYERS)}, got {value!r}")
    return value


def _parse_dim(value: str, owner: str, what: str) -> int:
    try:
        n = int(value)
    except ValueError:
        raise FeatureArgumentError(f"{owner} {what} must be an integer, got {value!r}") from None
    if n < 1:
        raise FeatureArgumentError(f"{owner} {what} must be >= 1")
    return n


@register
class BytesCopy(FeatureState):
    name = "BytesCopy"
    default_size = 784

    def __init__(self, target_size: int = default_size, layers: str = "headers"):
        self.target_size = target_size
        self.layers = layers
        self.buffer: bytearray | None = None
        self.filled = 0
        self.flushed = False

    @classmethod
    def from_args(cls, args):
        if len(args) > 2:
            raise FeatureArgumentError("BytesCopy takes (size, layers)")
        size = _parse_dim(args[0], "BytesCopy", "size") if args else cls.default_size
        layers = _parse_layers(args[1], "BytesCopy") if len(args) > 1 else "headers"
        return lambda: cls(size, layers)

    @property
    def complete(self) -> bool:
        return self.filled >= self.target_size

    def add_packet(self, pkt) -> None:
        if self.filled >= self.target_size:
            return
        frame = pkt.frame
        if self.layers == "headers":
            self._take(frame, pkt.link_length, pkt.payload_start)
        elif self.layers == "payload":
            self._take(frame, pkt.payload_start, pkt.payload_end)
        else:
            self._take(frame, pkt.link_length, pkt.payload_start)
            self._take(frame, pkt.payload_start, pkt.payload_end)
        self._filled_hook()

    def _take(self, frame, start: int, end: int) -> None:
        n = min(end - start, self.target_size - self.filled)
        if n <= 0:
            return
        if self.buffer is None:
            self._allocate()
        f = self.filled
        self.buffer[f:f + n] = frame[start:start + n]
        self.filled = f + n

    def _allocate(self) -> None:
        self.buffer = bytearray(self.target_size)

    def _filled_hook(self) -> None:
        pass

    def _payload(self) -> bytes:
        return bytes(self.buffer)

    def collect(self, slot_size: float, final: bool = False) -> dict | None:
        if self.flushed:
            return None
        if not self.complete and not final:
            return None
        if self.buffer is None:
            self._allocate()
        out = {
            "data": base64.b64encode(self._payload()).decode("ascii"),
            "bytes": self.filled,
            "truncated": not self.complete,
        }
        self._release()
        return out

    def _release(self) -> None:
        self.buffer = None
        self.flushed = True
        self.filled = self.target_size

    def approximate_size(self) -> int:
        size = 4 * WORD
        if self.buffer is not None:
            size += container_size(self.buffer)
        return size

    def __len__(self) -> int:
        return self.filled


@register
class PngCopy(BytesCopy):
    name = "PngCopy"

    def __init__(self, width: int = 28, height: int = 28, layers: str = "headers"):
        super().__init__(width * height, layers)
        self.width = width
        self.height = height
        self.filtered: bytearray | None = None
        self.rows_done = 0
        self.encoded: bytes | None = None

    @classmethod
    def from_args(cls, args):
        if len(args) not in (0, 2, 3):
            raise FeatureArgumentError("PngCopy takes (width, height[, layers])")
        w = _parse_dim(args[0], "PngCopy", "width") if args else 28
        h = _parse_dim(args[1], "PngCopy", "height") if args else 28
        layers = _parse_layers(args[2], "PngCopy") if len(args) == 3 else "headers"
        return lambda: cls(w, h, layers)

    def _allocate(self) -> None:
        super()._allocate()
        self.filtered = bytearray(self.height * (self.width + 1))

    def _filter_rows(self, upto: int) -> None:
        w = self.width
        buf = self.buffer
        stride = w + 1
        while self.rows_done < upto:
            y = self.rows_done
            row = bytes(buf[y * w:(y + 1) * w])
            prev = bytes(buf[(y - 1) * w:y * w]) if y else None
            self.filtered[y * stride:(y + 1) * stride] = png.filter_row(row, prev)
            self.rows_done = y + 1

    def _filled_hook(self) -> None:
        if self.buffer is None:
            return
        self._filter_rows(self.filled // self.width)
        if self.filled >= self.target_size and self.encoded is None:
            self.encoded = png.assemble(bytes(self.filtered), self.width, self.height)

    def _payload(self) -> bytes:
        if self.encoded is None:
            # short flow: the zero padding is already in the buffer
            self._filter_rows(self.height)
            self.encoded = png.assemble(bytes(self.filtered), self.width, self.height)
        return self.encoded

    def _release(self) -> None:
        super()._release()
        self.filtered = None
        self.encoded = None

    def approximate_size(self) -> int:
        size = super().approximate_size() + 4 * WORD
        if self.filtered is not None:
            size += container_size(self.filtered)
        if self.encoded is not None:
            size += container_size(self.encoded)
        return size
