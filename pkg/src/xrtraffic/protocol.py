"""Burst/fragment wire format for video frames and ancillary side streams.

Every fragment carries a 31-byte big-endian application header followed by
1247 bytes of frame data or zero padding, so each UDP payload is exactly
1278 bytes (1320 bytes on the wire with 42 bytes of UDP/IP/Ethernet
overhead). Header layout::

    offset  size  field
         0     2  magic (0x5852)
         2     1  version (1)
         3     4  frame_seq
         7     2  n_fragments
         9     2  frag_seq
        11     4  total_frame_size
        15     4  checksum (CRC-32 of the frame data, padding excluded)
        19    12  reserved (zero)
"""

from __future__ import annotations

import math
from collections import OrderedDict
import struct
import zlib
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import (
    ChecksumMismatch,
    FrameTooLarge,
    HeaderError,
    InconsistentBurst,
    MissingFragments,
    ValidationError,
)

MAGIC = 0x5852
VERSION = 1
HEADER_SIZE = 31
PAYLOAD_SIZE = 1278
DATA_SIZE = PAYLOAD_SIZE - HEADER_SIZE  # 1247
LINK_OVERHEAD = 42
WIRE_SIZE = PAYLOAD_SIZE + LINK_OVERHEAD  # 1320
MAX_FRAGMENTS = 0xFFFF

_HEADER = struct.Struct(">HBIHHII12x")
assert _HEADER.size == HEADER_SIZE


@dataclass(frozen=True)
class Header:
    frame_seq: int
    n_fragments: int
    frag_seq: int
    total_frame_size: int
    checksum: int


def encode_header(header: Header) -> bytes:
    h = header
    for name, value, bits in (
        ("frame_seq", h.frame_seq, 32), ("n_fragments", h.n_fragments, 16),
        ("frag_seq", h.frag_seq, 16), ("total_frame_size", h.total_frame_size, 32),
        ("checksum", h.checksum, 32),
    ):
        if not 0 <= value < 1 << bits:
            raise ValidationError(f"{name}={value} does not fit in {bits} bits")
    return _HEADER.pack(MAGIC, VERSION, h.frame_seq, h.n_fragments, h.frag_seq,
                        h.total_frame_size, h.checksum)


def decode_header(buf: bytes) -> Header:
    if len(buf) != HEADER_SIZE:
        raise HeaderError(f"header must be {HEADER_SIZE} bytes, got {len(buf)}")
    magic, version, *fields = _HEADER.unpack(buf)
    if magic != MAGIC:
        raise HeaderError(f"bad magic 0x{magic:04x}")
    if version != VERSION:
        raise HeaderError(f"unsupported header version {version}")
    return Header(*fields)


@dataclass(frozen=True)
class Fragment:
    frame_seq: int
    n_fragments: int
    frag_seq: int
    total_frame_size: int
    checksum: int
    payload: bytes

    def __post_init__(self):
        if len(self.payload) != DATA_SIZE:
            raise ValidationError(f"fragment payload must be {DATA_SIZE} bytes")
        if not 0 <= self.frag_seq < self.n_fragments:
            raise ValidationError("frag_seq must be < n_fragments")

    @property
    def header(self) -> Header:
        return Header(self.frame_seq, self.n_fragments, self.frag_seq,
                      self.total_frame_size, self.checksum)

    @property
    def data(self) -> bytes:
        """The frame bytes carried by this fragment, padding stripped."""
        used = min(DATA_SIZE, self.total_frame_size - self.frag_seq * DATA_SIZE)
        return self.payload[:max(used, 0)]

    def encode(self) -> bytes:
        return encode_header(self.header) + self.payload

    @classmethod
    def decode(cls, buf: bytes) -> "Fragment":
        if len(buf) != PAYLOAD_SIZE:
            raise HeaderError(f"fragment must be {PAYLOAD_SIZE} bytes, got {len(buf)}")
        h = decode_header(buf[:HEADER_SIZE])
        try:
            return cls(h.frame_seq, h.n_fragments, h.frag_seq, h.total_frame_size,
                       h.checksum, bytes(buf[HEADER_SIZE:]))
        except ValidationError as exc:
            raise HeaderError(str(exc)) from None


def fragment_count(size: int) -> int:
    if size < 1:
        raise ValidationError(f"frame size must be >= 1 byte, got {size}")
    return -(-int(size) // DATA_SIZE)


def fragment_counts(sizes) -> np.ndarray:
    """Vectorised ``fragment_count``."""
    sizes = np.asarray(sizes, dtype=np.int64)
    return -(-sizes // DATA_SIZE)


def wire_payload_bytes(size: int) -> int:
    """UDP payload bytes of the burst carrying ``size`` bytes of video data."""
    return fragment_count(size) * PAYLOAD_SIZE


def wire_bytes(size: int) -> int:
    return fragment_count(size) * WIRE_SIZE


def video_bytes_from_payload(udp_payload_bytes: int) -> int:
    """Data capacity of a burst whose total UDP payload is ``udp_payload_bytes``.

    Converts traces that count frame size at the UDP-payload level into the
    video-data convention used by the generator.
    """
    n = math.ceil(udp_payload_bytes / PAYLOAD_SIZE)
    return n * DATA_SIZE


def filler_bytes(frame_seq: int, size: int) -> bytes:
    """Deterministic stand-in content for a frame that has no real payload."""
    g = np.random.Generator(np.random.PCG64(frame_seq))
    return g.bytes(size)


def fragment_frame(frame, data: Optional[bytes] = None) -> list:
    """Split one frame into fixed-size fragments.

    ``frame`` is anything with ``index`` and ``size`` attributes (for example a
    ``FrameRecord``). Without ``data`` the frame content is synthesised
    deterministically from its index.
    """
    size = int(frame.size)
    n = fragment_count(size)
    if n > MAX_FRAGMENTS:
        raise FrameTooLarge(f"frame of {size} B needs {n} fragments (max {MAX_FRAGMENTS})")
    if size >= 1 << 32:
        raise FrameTooLarge(f"frame of {size} B overflows the 32-bit size field")
    if data is None:
        data = filler_bytes(frame.index, size)
    elif len(data) != size:
        raise ValidationError(f"frame data is {len(data)} B, expected {size}")
    seq = int(frame.index) & 0xFFFFFFFF
    crc = zlib.crc32(data)
    padded = data + bytes(n * DATA_SIZE - size)
    return [
        Fragment(seq, n, i, size, crc, padded[i * DATA_SIZE:(i + 1) * DATA_SIZE])
        for i in range(n)
    ]


@dataclass(frozen=True)
class ReassembledFrame:
    frame_seq: int
    size: int
    data: bytes


def reassemble(fragments: Iterable[Fragment]) -> ReassembledFrame:
    """Rebuild a frame from its fragments in any order, tolerating duplicates."""
    frags = list(fragments)
    if not frags:
        raise MissingFragments("no fragments", gaps=())
    first = frags[0]
    by_seq = {}
    for f in frags:
        if (f.frame_seq, f.n_fragments, f.total_frame_size, f.checksum) != (
            first.frame_seq, first.n_fragments, first.total_frame_size, first.checksum
        ):
            raise InconsistentBurst(f"fragment {f.frag_seq} disagrees with the burst header")
        prev = by_seq.get(f.frag_seq)
        if prev is not None and prev.payload != f.payload:
            raise InconsistentBurst(f"duplicate fragment {f.frag_seq} with different payload")
        by_seq[f.frag_seq] = f
    if first.n_fragments != fragment_count(first.total_frame_size):
        raise InconsistentBurst("n_fragments does not match total_frame_size")
    gaps = [i for i in range(first.n_fragments) if i not in by_seq]
    if gaps:
        raise MissingFragments(f"burst {first.frame_seq} is missing fragments {gaps}", gaps)
    data = b"".join(by_seq[i].payload for i in range(first.n_fragments))
    data = data[:first.total_frame_size]
    if zlib.crc32(data) != first.checksum:
        raise ChecksumMismatch(f"burst {first.frame_seq}: CRC-32 mismatch")
    return ReassembledFrame(first.frame_seq, first.total_frame_size, data)


class ReassemblyBuffer:
    """Per-flow collector that emits frames as their bursts complete.

    Late duplicates of an already emitted frame are dropped; the buffer
    remembers the last ``history`` completed frame numbers for that.
    Single-owner: callers must serialise access per flow.
    """

    def __init__(self, history: int = 4096):
        self._pending = {}
        self._done = OrderedDict()
        self._history = history

    def add(self, fragment: Fragment) -> Optional[ReassembledFrame]:
        if fragment.frame_seq in self._done:
            return None
        burst = self._pending.setdefault(fragment.frame_seq, {})
        burst[fragment.frag_seq] = fragment
        if len(burst) < fragment.n_fragments:
            return None
        del self._pending[fragment.frame_seq]
        frame = reassemble(burst.values())
        self._done[fragment.frame_seq] = None
        if len(self._done) > self._history:
            self._done.popitem(last=False)
        return frame

    @property
    def pending(self) -> dict:
        """frame_seq -> number of fragments still missing."""
        return {
            seq: next(iter(b.values())).n_fragments - len(b) for seq, b in self._pending.items()
        }


_LEN = struct.Struct(">I")


def serialize_fragments(fragments: Iterable[Fragment]) -> bytes:
    """Length-prefixed (u32 big-endian) concatenation of encoded fragments."""
    out = bytearray()
    for f in fragments:
        enc = f.encode()
        out += _LEN.pack(len(enc)) + enc
    return bytes(out)


def deserialize_fragments(blob: bytes) -> list:
    out = []
    pos = 0
    while pos < len(blob):
        if pos + 4 > len(blob):
            raise HeaderError("truncated length prefix")
        (n,) = _LEN.unpack_from(blob, pos)
        pos += 4
        if pos + n > len(blob):
            raise HeaderError("truncated fragment record")
        out.append(Fragment.decode(blob[pos:pos + n]))
        pos += n
    return out


@dataclass(frozen=True)
class AncillaryStreamSpec:
    name: str
    direction: str  # "uplink" or "downlink"
    packet_payload: int
    mean_rate: float

    def __post_init__(self):
        if self.direction not in ("uplink", "downlink"):
            raise ValidationError(f"direction must be uplink or downlink, got {self.direction!r}")
        if self.packet_payload < 1:
            raise ValidationError("packet payload must be >= 1 byte")
        if not self.mean_rate > 0:
            raise ValidationError("mean rate must be > 0")

    @property
    def period(self) -> float:
        return 8.0 * self.packet_payload / self.mean_rate


HEAD_TRACKING = AncillaryStreamSpec("head-tracking", "uplink", 192, 135e3)
HEAD_TRACKING_SHORT = AncillaryStreamSpec("head-tracking-short", "uplink", 97, 135e3)
# one feedback packet per video frame at 60 FPS
UPLINK_FEEDBACK = AncillaryStreamSpec("uplink-feedback", "uplink", 21, 21 * 8 * 60.0)
DOWNLINK_FEEDBACK = AncillaryStreamSpec("downlink-feedback", "downlink", 10, 4e3)

ANCILLARY_DEFAULTS = {
    s.name: s for s in (HEAD_TRACKING, HEAD_TRACKING_SHORT, UPLINK_FEEDBACK, DOWNLINK_FEEDBACK)
}


def ancillary_packet_schedule(spec: AncillaryStreamSpec, duration: float) -> list:
    """Periodic (timestamp, size) pairs at k * period for k * period < duration."""
    period = spec.period
    count = max(0, math.ceil(duration / period - 1e-9))
    return [(k * period, spec.packet_payload) for k in range(count)]
