"""Frame traces and their CSV exchange format.

A trace file looks like::

    # app=Virus Popper
    # fps=60
    # target_rate_bps=30000000.0
    # measured_rate_bps=30012345.67
    # seed=1
    # duration_s=60.0
    index,time_s,size_bytes
    0,0.016702,61875
    ...

Metadata values are written with ``repr`` so they read back bit-exact.
Timestamps are printed with microsecond precision.
"""

from __future__ import annotations

import io
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import TraceFormatError

CORE_KEYS = ("app", "fps", "target_rate_bps", "measured_rate_bps", "seed", "duration_s")
CAPTURED = "captured"


@dataclass(frozen=True)
class FrameRecord:
    index: int
    timestamp: float
    size: int


@dataclass(frozen=True)
class TraceMetadata:
    app: str
    fps: int
    target_rate_bps: float
    measured_rate_bps: float
    duration_s: float
    seed: Optional[int] = None  # None for captured traces
    extra: dict = field(default_factory=dict)

    @property
    def rate_in_use_bps(self) -> float:
        """Rate the generator was driven with (falls back to the target rate)."""
        return float(self.extra.get("rate_in_use_bps", self.target_rate_bps))


def measured_rate(times, sizes, fps: Optional[float] = None) -> float:
    """8 * total bytes / (span + one mean IFI), in bits per second."""
    times = np.asarray(times, dtype=float)
    sizes = np.asarray(sizes)
    n = len(times)
    if n == 0:
        return 0.0
    span = float(times[-1] - times[0])
    if n >= 2:
        mean_ifi = span / (n - 1)
    elif fps:
        mean_ifi = 1.0 / fps
    else:
        return float("nan")
    return 8.0 * float(sizes.sum()) / (span + mean_ifi)


class Trace:
    """An ordered sequence of video frames plus metadata.

    Frames are held as two numpy arrays; ``frames`` materialises
    ``FrameRecord`` objects on demand.
    """

    def __init__(self, metadata: TraceMetadata, times, sizes):
        times = np.ascontiguousarray(times, dtype=np.float64)
        sizes = np.ascontiguousarray(sizes, dtype=np.int64)
        if times.shape != sizes.shape or times.ndim != 1:
            raise TraceFormatError("times and sizes must be 1-D arrays of equal length")
        if len(times) and np.any(np.diff(times) <= 0):
            raise TraceFormatError("timestamps must be strictly increasing")
        if len(sizes) and sizes.min() < 1:
            raise TraceFormatError("frame sizes must be >= 1 byte")
        times.setflags(write=False)
        sizes.setflags(write=False)
        self.metadata = metadata
        self.times = times
        self.sizes = sizes

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self) -> Iterator[FrameRecord]:
        for i, (t, s) in enumerate(zip(self.times.tolist(), self.sizes.tolist())):
            yield FrameRecord(i, t, s)

    @property
    def frames(self) -> list:
        return list(self)

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.metadata == other.metadata
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.sizes, other.sizes)
        )

    def __repr__(self):
        return f"Trace(app={self.metadata.app!r}, fps={self.metadata.fps}, frames={len(self)})"

    def recompute_measured_rate(self) -> float:
        return measured_rate(self.times, self.sizes, self.metadata.fps)

    def shifted(self, offset: float) -> "Trace":
        return Trace(self.metadata, self.times + offset, self.sizes)

    def with_metadata(self, **changes) -> "Trace":
        return Trace(replace(self.metadata, **changes), self.times, self.sizes)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_trace(trace: Trace) -> str:
    md = trace.metadata
    buf = io.StringIO()
    core = {
        "app": md.app,
        "fps": md.fps,
        "target_rate_bps": float(md.target_rate_bps),
        "measured_rate_bps": float(md.measured_rate_bps),
        "seed": CAPTURED if md.seed is None else md.seed,
        "duration_s": float(md.duration_s),
    }
    for key in CORE_KEYS:
        buf.write(f"# {key}={_fmt(core[key])}\n")
    for key in sorted(md.extra):
        buf.write(f"# {key}={_fmt(md.extra[key])}\n")
    buf.write("index,time_s,size_bytes\n")
    for i, (t, s) in enumerate(zip(trace.times.tolist(), trace.sizes.tolist())):
        buf.write(f"{i},{t:.6f},{s}\n")
    return buf.getvalue()


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_trace(text: str, source: str = "<string>") -> Trace:
    meta: dict = {}
    lines = text.splitlines()
    pos = 0
    while pos < len(lines) and lines[pos].startswith("#"):
        body = lines[pos][1:].strip()
        pos += 1
        if not body:
            continue
        if "=" not in body:
            raise TraceFormatError(f"{source}: malformed metadata line {body!r}")
        key, _, value = body.partition("=")
        meta[key.strip()] = value.strip()
    if pos >= len(lines) or lines[pos].strip() != "index,time_s,size_bytes":
        raise TraceFormatError(f"{source}: missing 'index,time_s,size_bytes' header row")
    missing = [k for k in CORE_KEYS if k not in meta]
    if missing:
        raise TraceFormatError(f"{source}: missing metadata keys {missing}")
    body = "\n".join(lines[pos + 1:]).strip()
    if body:
        try:
            rows = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2,
                              dtype=np.float64)
        except ValueError as exc:
            raise TraceFormatError(f"{source}: {exc}") from None
        if rows.shape[1] != 3:
            raise TraceFormatError(f"{source}: expected 3 columns")
        times = rows[:, 1]
        sizes = rows[:, 2]
        if not np.all(sizes == np.round(sizes)):
            raise TraceFormatError(f"{source}: non-integer frame size")
    else:
        times = np.empty(0)
        sizes = np.empty(0)
    try:
        seed_text = meta.pop("seed")
        metadata = TraceMetadata(
            app=meta.pop("app"),
            fps=int(meta.pop("fps")),
            target_rate_bps=float(meta.pop("target_rate_bps")),
            measured_rate_bps=float(meta.pop("measured_rate_bps")),
            duration_s=float(meta.pop("duration_s")),
            seed=None if seed_text == CAPTURED else int(seed_text),
            extra={k: _parse_value(v) for k, v in meta.items()},
        )
    except ValueError as exc:
        raise TraceFormatError(f"{source}: bad metadata value ({exc})") from None
    return Trace(metadata, times, sizes.astype(np.int64))


def read_trace(path) -> Trace:
    path = Path(path)
    return parse_trace(path.read_text(), source=str(path))


def atomic_write(path, data) -> None:
    """Write ``data`` (str or bytes) to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trace(trace: Trace, path) -> None:
    atomic_write(path, format_trace(trace))
