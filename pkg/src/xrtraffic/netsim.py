"""Discrete-event simulation of one shared downlink carrying fragment bursts.

Every flow is an open-loop source: its frames come from a synthesized trace
shifted by a start offset in [0, 1) s. A frame becomes a burst of fixed-size
fragments that enters the link queue at its generation instant. The link
serves one fragment at a time; each costs
``8 * (1278 + overhead_bytes) / capacity + overhead_time`` seconds. A frame's
delay is the completion time of its last fragment minus its generation
instant. Frames not fully delivered by the horizon are excluded from the
delay statistics.

Time is kept in integer nanoseconds. Within one busy period completion times
are computed from the cumulative work since the period began and rounded
once, so rounding never accumulates across fragments.
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng as _rng
from .errors import EmptyInput, ValidationError, XRTrafficError
from .model import StreamConfig, synthesize_trace
from .protocol import DATA_SIZE, LINK_OVERHEAD, PAYLOAD_SIZE, AncillaryStreamSpec, fragment_counts

NS = 1_000_000_000
FIFO = "fifo"
ROUND_ROBIN = "round-robin"
DISCIPLINES = (FIFO, ROUND_ROBIN)
DEFAULT_CAPACITY = 430e6


@dataclass(frozen=True)
class LinkSpec:
    capacity: float = DEFAULT_CAPACITY
    per_fragment_overhead_time: float = 0.0
    per_fragment_overhead_bytes: int = LINK_OVERHEAD
    queue_discipline: str = FIFO
    queue_limit: int = 0  # fragments held at the link, 0 = unbounded

    def __post_init__(self):
        if not (self.capacity > 0 and math.isfinite(self.capacity)):
            raise ValidationError(f"link capacity must be > 0, got {self.capacity}")
        if self.per_fragment_overhead_time < 0 or self.per_fragment_overhead_bytes < 0:
            raise ValidationError("link overheads must be >= 0")
        if self.queue_discipline not in DISCIPLINES:
            raise ValidationError(
                f"queue discipline must be one of {DISCIPLINES}, got {self.queue_discipline!r}"
            )
        if self.queue_limit < 0:
            raise ValidationError("queue limit must be >= 0")

    def packet_work_ns(self, payload_bytes: int) -> float:
        """Service time of one packet with the given UDP payload, in ns."""
        bits = 8.0 * (payload_bytes + self.per_fragment_overhead_bytes)
        return bits * NS / self.capacity + self.per_fragment_overhead_time * NS

    @property
    def fragment_work_ns(self) -> float:
        return self.packet_work_ns(PAYLOAD_SIZE)


@dataclass(frozen=True)
class FlowSpec:
    stream: StreamConfig
    start_offset: Optional[float] = None  # None: drawn from the simulation seed
    ancillary: tuple = ()

    def __post_init__(self):
        if self.start_offset is not None and not 0 <= self.start_offset < 1:
            raise ValidationError(f"start offset must lie in [0, 1), got {self.start_offset}")
        for spec in self.ancillary:
            if not isinstance(spec, AncillaryStreamSpec):
                raise ValidationError("ancillary entries must be AncillaryStreamSpec")


@dataclass
class FlowMetrics:
    flow: int
    avg_throughput: float
    avg_frame_delay: float
    p95_frame_delay: float
    median_frame_delay: float
    min_frame_delay: float
    max_frame_delay: float
    frames_generated: int
    frames_delivered: int
    frames_dropped: int
    max_queue: int
    offered_rate: float
    start_offset: float
    delay_trend: float
    generated_bytes: int
    delivered_bytes: int
    queued_bytes: int
    dropped_bytes: int

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class FlowFrames:
    """Per-frame outcome of one flow (times in ns)."""

    gen_ns: np.ndarray
    sizes: np.ndarray
    n_fragments: np.ndarray
    admitted: np.ndarray
    start_ns: np.ndarray
    end_ns: np.ndarray
    delivered: np.ndarray

    @property
    def delays(self) -> np.ndarray:
        return (self.end_ns[self.delivered] - self.gen_ns[self.delivered]) / NS


@dataclass
class SimulationResult:
    flows: list
    frames: list
    duration: float
    busy_time: float

    @property
    def utilization(self) -> float:
        return self.busy_time / self.duration


def percentile(delays, p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    values = np.sort(np.asarray(delays, dtype=float))
    n = len(values)
    if n == 0:
        raise EmptyInput("percentile of an empty sample")
    if not 0 <= p <= 100:
        raise ValidationError(f"percentile must lie in [0, 100], got {p}")
    rank = max(1, math.ceil(p / 100.0 * n))
    return float(values[rank - 1])


class _Server:
    def __init__(self):
        self.free_at = 0
        self._period_start = 0
        self._work = 0.0
        self.busy_ns = 0

    def transmit(self, ready: int, work: float):
        """Serve ``work`` ns of transmission, starting no earlier than ``ready``."""
        if ready >= self.free_at:
            self._period_start = ready
            self._work = 0.0
            start = ready
        else:
            start = self.free_at
        self._work += work
        end = self._period_start + int(round(self._work))
        self.busy_ns += end - start
        self.free_at = end
        return start, end


@dataclass
class _Units:
    """All transmission units (video bursts and ancillary packets), sorted."""

    time: np.ndarray
    queue: np.ndarray  # RR queue key
    flow: np.ndarray   # owning flow (-1 never; ancillary carry their flow id)
    frame: np.ndarray  # frame index within flow, -1 for ancillary
    count: np.ndarray  # packets in the unit
    work: np.ndarray   # per-packet work in ns


def _build_flows(link: LinkSpec, flows: Sequence[FlowSpec], duration: float, seed: int):
    offsets_drawn = _rng.substream(seed, _rng.OFFSET_STREAM).random(len(flows))
    per_flow = []
    for i, spec in enumerate(flows):
        offset = spec.start_offset if spec.start_offset is not None else float(offsets_drawn[i])
        active = duration - offset
        times = np.empty(0)
        sizes = np.empty(0, dtype=np.int64)
        if active > 0:
            trace_seed = _rng.derive_seed(seed, _rng.FLOW_SEED_STREAM, i, spec.stream.seed)
            cfg = spec.stream.replace(duration=active, seed=trace_seed)
            try:
                trace = synthesize_trace(cfg)
                times, sizes = trace.times + offset, trace.sizes
            except ValidationError:
                if active >= 1.0 / spec.stream.frame_rate:
                    raise
        per_flow.append((offset, times, sizes))
    return per_flow


def _gather_units(link, flows, per_flow, horizon_ns):
    t, q, fl, fr, cnt, work = [], [], [], [], [], []
    n = len(flows)
    frag_work = link.fragment_work_ns
    for i, (spec, (offset, times, sizes)) in enumerate(zip(flows, per_flow)):
        gen = np.rint(times * NS).astype(np.int64)
        t.append(gen)
        q.append(np.full(len(gen), i))
        fl.append(np.full(len(gen), i))
        fr.append(np.arange(len(gen)))
        cnt.append(fragment_counts(sizes) if len(sizes) else np.empty(0, dtype=np.int64))
        work.append(np.full(len(gen), frag_work))
        for j, anc in enumerate(spec.ancillary):
            k = np.arange(max(0, math.ceil((horizon_ns / NS - offset) / anc.period - 1e-9)))
            at = np.rint((offset + k * anc.period) * NS).astype(np.int64)
            at = at[at <= horizon_ns]
            t.append(at)
            q.append(np.full(len(at), n + i * 16 + j))
            fl.append(np.full(len(at), i))
            fr.append(np.full(len(at), -1))
            cnt.append(np.ones(len(at), dtype=np.int64))
            work.append(np.full(len(at), link.packet_work_ns(anc.packet_payload)))
    cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.empty(0, dt)  # noqa: E731
    units = _Units(cat(t, np.int64), cat(q, np.int64), cat(fl, np.int64), cat(fr, np.int64),
                   cat(cnt, np.int64), cat(work, np.float64))
    # total order: (time, flow id, frame/packet sequence)
    order = np.lexsort((units.frame, units.queue, units.time))
    return _Units(*(getattr(units, f)[order] for f in ("time", "queue", "flow", "frame", "count", "work")))


def _run_fifo(units: _Units, limit: int):
    n = len(units.time)
    admitted = np.zeros(n, dtype=np.int64)
    start = np.zeros(n, dtype=np.int64)
    end = np.zeros(n, dtype=np.int64)
    occupancy = np.zeros(n, dtype=np.int64)
    server = _Server()
    pending = deque()  # (end, start, count, work) of admitted, unfinished units
    pending_pkts = 0
    times, counts, works = units.time.tolist(), units.count.tolist(), units.work.tolist()
    for u in range(n):
        t = times[u]
        while pending and pending[0][0] <= t:
            pending_pkts -= pending.popleft()[2]
        occ = pending_pkts
        if pending and pending[0][1] < t:
            h_end, h_start, h_cnt, h_work = pending[0]
            occ -= min(h_cnt - 1, int((t - h_start) // h_work))
        k = counts[u]
        m = k if limit == 0 else min(k, max(0, limit - occ))
        admitted[u] = m
        occupancy[u] = occ + m
        if m:
            s, e = server.transmit(t, m * works[u])
            start[u], end[u] = s, e
            pending.append((e, s, m, works[u]))
            pending_pkts += m
        else:
            start[u] = end[u] = t
    return admitted, start, end, occupancy, server


def _run_round_robin(units: _Units, limit: int, horizon_ns: int):
    """Packet-by-packet service cycling over the non-empty per-flow queues.

    Arrivals at time t are enqueued before the server picks the packet that
    starts at t.
    """
    n = len(units.time)
    admitted = np.zeros(n, dtype=np.int64)
    start = np.full(n, -1, dtype=np.int64)
    end = np.zeros(n, dtype=np.int64)
    occupancy = np.zeros(n, dtype=np.int64)
    server = _Server()
    keys = sorted(set(units.queue.tolist()))
    slot = {k: i for i, k in enumerate(keys)}
    queues = [deque() for _ in keys]  # entries: [unit, packets left]
    times, works = units.time.tolist(), units.work.tolist()
    backlog = 0
    ptr = 0

    def serve_before(t):
        nonlocal backlog, ptr
        while backlog and server.free_at < t:
            while not queues[ptr]:
                ptr = (ptr + 1) % len(queues)
            entry = queues[ptr][0]
            u = entry[0]
            s, e = server.transmit(max(server.free_at, times[u]), works[u])
            if start[u] < 0:
                start[u] = s
            entry[1] -= 1
            backlog -= 1
            if entry[1] == 0:
                end[u] = e
                queues[ptr].popleft()
            ptr = (ptr + 1) % len(queues)

    for u, (key, k) in enumerate(zip(units.queue.tolist(), units.count.tolist())):
        t = times[u]
        serve_before(t)
        occ = backlog + (1 if server.free_at > t else 0)
        m = k if limit == 0 else min(k, max(0, limit - occ))
        admitted[u] = m
        occupancy[u] = occ + m
        if m:
            queues[slot[key]].append([u, m])
            backlog += m
        else:
            start[u] = end[u] = t
    serve_before(horizon_ns + 1)
    # units never finished by the horizon
    unfinished = (admitted > 0) & (end == 0)
    end[unfinished] = np.iinfo(np.int64).max
    start[unfinished & (start < 0)] = np.iinfo(np.int64).max
    return admitted, start, end, occupancy, server


def simulate(link: LinkSpec, flows: Sequence[FlowSpec], duration: float,
             seed: int = 0) -> SimulationResult:
    if not flows:
        raise ValidationError("simulation needs at least one flow")
    if not (duration > 0 and math.isfinite(duration)):
        raise ValidationError(f"duration must be > 0, got {duration}")
    _rng.check_seed(seed)
    horizon = int(round(duration * NS))
    per_flow = _build_flows(link, flows, duration, seed)
    units = _gather_units(link, flows, per_flow, horizon)

    if link.queue_discipline == FIFO:
        admitted, start, end, occ, server = _run_fifo(units, link.queue_limit)
    else:
        admitted, start, end, occ, server = _run_round_robin(units, link.queue_limit, horizon)

    results, frames = [], []
    for i, (spec, (offset, times, sizes)) in enumerate(zip(flows, per_flow)):
        mask = (units.flow == i) & (units.frame >= 0)
        idx = np.flatnonzero(mask)
        idx = idx[np.argsort(units.frame[idx], kind="stable")]
        ff = FlowFrames(
            gen_ns=units.time[idx],
            sizes=np.asarray(sizes, dtype=np.int64),
            n_fragments=units.count[idx],
            admitted=admitted[idx],
            start_ns=start[idx],
            end_ns=end[idx],
            delivered=(admitted[idx] == units.count[idx]) & (end[idx] <= horizon),
        )
        frames.append(ff)
        flow_occ = occ[idx]
        results.append(_flow_metrics(i, spec, offset, ff, flow_occ, link, horizon))
    # arrivals stop at the horizon, so only the final busy period can spill past it
    busy = (server.busy_ns - max(0, server.free_at - horizon)) / NS
    return SimulationResult(results, frames, duration, busy)


def _completed_packets(ff: FlowFrames, link: LinkSpec, horizon: int) -> np.ndarray:
    """Fragments of each frame fully transmitted by the horizon."""
    work = link.fragment_work_ns
    done = np.where(ff.end_ns <= horizon, ff.admitted, 0)
    partial = (ff.start_ns < horizon) & (ff.end_ns > horizon) & (ff.admitted > 0)
    if np.any(partial):
        est = np.floor((horizon - ff.start_ns[partial]) / work).astype(np.int64)
        done[partial] = np.clip(est, 0, ff.admitted[partial] - 1)
    return done


def _flow_metrics(i, spec, offset, ff: FlowFrames, occ, link, horizon) -> FlowMetrics:
    delays = ff.delays
    active = horizon / NS - offset
    delivered_frame_bytes = int(ff.sizes[ff.delivered].sum())
    generated = int(ff.sizes.sum())
    done = _completed_packets(ff, link, horizon)
    delivered_bytes = int(np.minimum(ff.sizes, done * DATA_SIZE).sum())
    admitted_bytes = int(np.minimum(ff.sizes, ff.admitted * DATA_SIZE).sum())
    nan = float("nan")
    if len(delays):
        mid = (offset + active / 2.0) * NS
        gen_ok = ff.gen_ns[ff.delivered]
        first, second = delays[gen_ok < mid], delays[gen_ok >= mid]
        trend = float(second.mean() / first.mean()) if len(first) and len(second) else nan
        stats = (float(delays.mean()), percentile(delays, 95), percentile(delays, 50),
                 float(delays.min()), float(delays.max()))
    else:
        trend = nan
        stats = (nan,) * 5
    return FlowMetrics(
        flow=i,
        avg_throughput=8.0 * delivered_frame_bytes / active if active > 0 else 0.0,
        avg_frame_delay=stats[0],
        p95_frame_delay=stats[1],
        median_frame_delay=stats[2],
        min_frame_delay=stats[3],
        max_frame_delay=stats[4],
        frames_generated=len(ff.sizes),
        frames_delivered=int(ff.delivered.sum()),
        frames_dropped=int((ff.admitted < ff.n_fragments).sum()),
        max_queue=int(occ.max()) if len(occ) else 0,
        offered_rate=8.0 * generated / active if active > 0 else 0.0,
        start_offset=offset,
        delay_trend=trend,
        generated_bytes=generated,
        delivered_bytes=delivered_bytes,
        queued_bytes=admitted_bytes - delivered_bytes,
        dropped_bytes=generated - admitted_bytes,
    )


def run_simulation(link: LinkSpec, flows: Sequence[FlowSpec], duration: float,
                   seed: int = 0) -> list:
    return simulate(link, flows, duration, seed).flows


# -- campaigns --------------------------------------------------------------

METRIC_FIELDS = ("avg_throughput", "avg_frame_delay", "p95_frame_delay", "frames_generated",
                 "frames_delivered", "max_queue", "offered_rate", "delay_trend")
UNSTABLE_TREND = 1.5
UNSTABLE_DELIVERY = 0.9


@dataclass(frozen=True)
class CampaignPoint:
    variable: str
    value: float
    link: LinkSpec
    flows: tuple
    duration: float


@dataclass
class SweepRow:
    point: int
    variable: str
    value: float
    flow: int
    n_seeds: int
    metrics: dict = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def _run_point(args):
    point, seed = args
    try:
        return run_simulation(point.link, point.flows, point.duration, seed), None
    except XRTrafficError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _nanmean(values):
    arr = np.asarray(values, dtype=float)
    arr = arr[~np.isnan(arr)]
    return float(arr.mean()) if len(arr) else float("nan")


def sweep(campaign: Sequence[CampaignPoint], seeds: Sequence[int], workers: int = 1) -> list:
    """Run every point once per seed and average the flow metrics over seeds."""
    if not campaign:
        raise ValidationError("campaign needs at least one point")
    if not seeds:
        raise ValidationError("campaign needs at least one seed")
    jobs = [(p, s) for p in campaign for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_point, jobs))
    else:
        outputs = [_run_point(j) for j in jobs]

    rows = []
    for pi, point in enumerate(campaign):
        runs = outputs[pi * len(seeds):(pi + 1) * len(seeds)]
        errors = [err for _, err in runs if err]
        if errors:
            rows.append(SweepRow(pi, point.variable, point.value, -1, len(seeds), {}, errors[0]))
            continue
        for fi in range(len(point.flows)):
            per_seed = [res[fi] for res, _ in runs]
            metrics = {f: _nanmean([getattr(m, f) for m in per_seed]) for f in METRIC_FIELDS}
            rows.append(SweepRow(pi, point.variable, point.value, fi, len(seeds), metrics))
    return rows


def point_status(rows: Sequence[SweepRow]) -> str:
    """OK, UNSTABLE or FAILED for the rows of one campaign point.

    A point is unstable when frame delays keep growing over the run (the
    second half averages more than 1.5x the first half) or fewer than 90% of
    generated frames are delivered.
    """
    if any(r.failed for r in rows):
        return "FAILED"
    trend = _nanmean([r.metrics["delay_trend"] for r in rows])
    gen = sum(r.metrics["frames_generated"] for r in rows)
    dlv = sum(r.metrics["frames_delivered"] for r in rows)
    if (trend > UNSTABLE_TREND) or (gen and dlv / gen < UNSTABLE_DELIVERY):
        return "UNSTABLE"
    return "OK"
