"""Declarative campaign files and versioned result formats.

A campaign is a YAML mapping::

    name: arena
    duration: 60
    seeds: [1, 2, 3]
    link: {capacity: 430M, per_fragment_overhead_time: 0,
           per_fragment_overhead_bytes: 42, queue_discipline: fifo, queue_limit: 0}
    flow: {app: ge-vr-cities, fps: 30, rate: 50M, rate_mode: empirical,
           empirical_factor: 1.07, ancillary: [head-tracking]}
    users: 1
    sweep: {variable: users, values: [1, 2, 3, 4, 5, 6, 7, 8]}

``sweep.variable`` is one of ``rate`` (bit/s, suffixes allowed), ``users``,
``fps`` or ``capacity``. Without a ``sweep`` section the campaign is a single
point.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
from dataclasses import replace
from pathlib import Path

import yaml

from .errors import ConfigError, ValidationError
from .model import AppProfile, StreamConfig, get_profile, load_profile
from .netsim import CampaignPoint, FlowSpec, LinkSpec, point_status
from .protocol import ANCILLARY_DEFAULTS

CAMPAIGN_SCHEMA = "xrtraffic.campaign/1"
RESULTS_SCHEMA = "xrtraffic.results/1"
SUMMARY_SCHEMA = "xrtraffic.summary/1"
PROFILE_DIR_ENV = "XRTRAFFIC_PROFILE_DIR"

_SUFFIX = {"": 1.0, "k": 1e3, "m": 1e6, "g": 1e9}


def parse_rate(text) -> float:
    """'30M' -> 30e6, '140k' -> 140e3; plain numbers are bit/s."""
    if isinstance(text, (int, float)):
        return float(text)
    m = re.fullmatch(r"\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*([kKmMgG]?)(?:bps|b/s)?\s*", str(text))
    if not m:
        raise ValidationError(f"cannot parse rate {text!r} (expected e.g. 30M, 140k, 5e6)")
    return float(m.group(1)) * _SUFFIX[m.group(2).lower()]


def resolve_profile(app: str) -> AppProfile:
    """Built-in name, a profile file path, or ``<name>.profile`` in $XRTRAFFIC_PROFILE_DIR."""
    path = Path(app)
    if path.suffix and path.is_file():
        return load_profile(path)
    try:
        return get_profile(app)
    except ValidationError:
        directory = os.environ.get(PROFILE_DIR_ENV)
        if directory:
            candidate = Path(directory) / f"{app}.profile"
            if candidate.is_file():
                return load_profile(candidate)
        raise


def _link_from(cfg: dict) -> LinkSpec:
    cfg = dict(cfg or {})
    kwargs = {}
    if "capacity" in cfg:
        kwargs["capacity"] = parse_rate(cfg.pop("capacity"))
    for key, cast in (("per_fragment_overhead_time", float), ("per_fragment_overhead_bytes", int),
                      ("queue_discipline", str), ("queue_limit", int)):
        if key in cfg:
            kwargs[key] = cast(cfg.pop(key))
    if cfg:
        raise ConfigError(f"unknown link keys {sorted(cfg)}")
    return LinkSpec(**kwargs)


def _flow_from(cfg: dict) -> FlowSpec:
    cfg = dict(cfg or {})
    try:
        app = cfg.pop("app")
        fps = int(cfg.pop("fps"))
        rate = parse_rate(cfg.pop("rate"))
    except KeyError as exc:
        raise ConfigError(f"flow section misses key {exc}") from None
    mode = cfg.pop("rate_mode", "target")
    factor = cfg.pop("empirical_factor", None)
    emp = cfg.pop("empirical_rate", None)
    empirical = None
    if mode == "empirical":
        if emp is not None:
            empirical = parse_rate(emp)
        elif factor is not None:
            empirical = rate * float(factor)
        else:
            raise ConfigError("rate_mode empirical needs empirical_rate or empirical_factor")
    elif mode != "target":
        raise ConfigError(f"rate_mode must be target or empirical, got {mode!r}")
    ancillary = []
    for name in cfg.pop("ancillary", []) or []:
        if name not in ANCILLARY_DEFAULTS:
            raise ConfigError(f"unknown ancillary stream {name!r}; known: {sorted(ANCILLARY_DEFAULTS)}")
        ancillary.append(ANCILLARY_DEFAULTS[name])
    stream = StreamConfig(
        profile=resolve_profile(app),
        frame_rate=fps,
        target_rate=rate,
        duration=1.0,  # replaced by the simulator
        seed=int(cfg.pop("seed", 0)),
        empirical_rate=empirical,
        dispersion_scale=float(cfg.pop("dispersion_scale", 1.0)),
    )
    offset = cfg.pop("start_offset", None)
    if cfg:
        raise ConfigError(f"unknown flow keys {sorted(cfg)}")
    return FlowSpec(stream, None if offset is None else float(offset), tuple(ancillary))


class Campaign:
    def __init__(self, name: str, points: list, seeds: list, raw: dict):
        self.name = name
        self.points = points
        self.seeds = seeds
        self.raw = raw

    @property
    def variable(self) -> str:
        return self.points[0].variable


def _retarget(flow: FlowSpec, **stream_changes) -> FlowSpec:
    stream = flow.stream
    if "target_rate" in stream_changes and stream.empirical_rate is not None:
        ratio = stream.empirical_rate / stream.target_rate
        stream_changes["empirical_rate"] = stream_changes["target_rate"] * ratio
    return replace(flow, stream=replace(stream, **stream_changes))


def build_campaign(raw: dict) -> Campaign:
    if not isinstance(raw, dict):
        raise ConfigError("campaign file must hold a mapping")
    raw = dict(raw)
    schema = raw.get("schema", CAMPAIGN_SCHEMA)
    if schema != CAMPAIGN_SCHEMA:
        raise ConfigError(f"unsupported campaign schema {schema!r}")
    try:
        duration = float(raw["duration"])
        flow_cfg = raw["flow"]
    except KeyError as exc:
        raise ConfigError(f"campaign misses key {exc}") from None
    seeds = raw.get("seeds", [0])
    seeds = [int(s) for s in (seeds if isinstance(seeds, list) else [seeds])]
    if not seeds:
        raise ConfigError("seeds must not be empty")
    link = _link_from(raw.get("link"))
    flow = _flow_from(flow_cfg)
    users = int(raw.get("users", 1))
    if users < 1:
        raise ConfigError("users must be >= 1")

    sweep_cfg = raw.get("sweep")
    points = []
    if not sweep_cfg:
        points.append(CampaignPoint("none", 0.0, link, (flow,) * users, duration))
    else:
        variable = sweep_cfg.get("variable")
        values = sweep_cfg.get("values") or []
        if not values:
            raise ConfigError("sweep.values must not be empty")
        for v in values:
            if variable == "rate":
                value = parse_rate(v)
                pt = CampaignPoint(variable, value, link, (_retarget(flow, target_rate=value),) * users, duration)
            elif variable == "users":
                value = int(v)
                if value < 1:
                    raise ConfigError("users values must be >= 1")
                pt = CampaignPoint(variable, float(value), link, (flow,) * value, duration)
            elif variable == "fps":
                pt = CampaignPoint(variable, float(int(v)), link, (_retarget(flow, frame_rate=int(v)),) * users, duration)
            elif variable == "capacity":
                value = parse_rate(v)
                pt = CampaignPoint(variable, value, replace(link, capacity=value), (flow,) * users, duration)
            else:
                raise ConfigError(f"sweep.variable must be rate, users, fps or capacity, got {variable!r}")
            points.append(pt)
    return Campaign(str(raw.get("name", "campaign")), points, seeds, raw)


def load_campaign(path) -> Campaign:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return build_campaign(raw)


RESULT_COLUMNS = (
    "schema", "point", "variable", "value", "flow", "app", "fps", "target_rate_bps",
    "rate_in_use_bps", "n_seeds", "avg_throughput_bps", "avg_frame_delay_s",
    "p95_frame_delay_s", "frames_generated", "frames_delivered", "max_queue",
    "offered_rate_bps", "delay_trend", "status", "error",
)


def _num(x) -> str:
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


def results_csv(campaign: Campaign, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    statuses = {pi: point_status([r for r in rows if r.point == pi]) for pi in {r.point for r in rows}}
    for r in rows:
        point = campaign.points[r.point]
        flow = point.flows[r.flow].stream if r.flow >= 0 else None
        m = r.metrics
        w.writerow([
            RESULTS_SCHEMA, r.point, r.variable, _num(r.value), r.flow,
            flow.profile.name if flow else "", flow.frame_rate if flow else "",
            _num(flow.target_rate) if flow else "", _num(flow.rate_in_use) if flow else "",
            r.n_seeds,
            *(_num(m.get(k, float("nan"))) for k in (
                "avg_throughput", "avg_frame_delay", "p95_frame_delay", "frames_generated",
                "frames_delivered", "max_queue", "offered_rate", "delay_trend")),
            statuses[r.point], r.error or "",
        ])
    return buf.getvalue()


def summary_json(campaign: Campaign, rows: list) -> str:
    points = []
    for pi, point in enumerate(campaign.points):
        prow = [r for r in rows if r.point == pi]
        ok = [r for r in prow if not r.failed]
        mean = lambda k: (sum(r.metrics[k] for r in ok) / len(ok)) if ok else None  # noqa: E731
        points.append({
            "point": pi,
            "variable": point.variable,
            "value": point.value,
            "flows": len(point.flows),
            "status": point_status(prow),
            "avg_throughput_bps": mean("avg_throughput"),
            "aggregate_throughput_bps": sum(r.metrics["avg_throughput"] for r in ok) if ok else None,
            "avg_frame_delay_s": mean("avg_frame_delay"),
            "p95_frame_delay_s": mean("p95_frame_delay"),
            "error": next((r.error for r in prow if r.failed), None),
        })
    doc = {"schema": SUMMARY_SCHEMA, "campaign": campaign.name, "seeds": campaign.seeds,
           "points": points}
    return json.dumps(_clean_nan(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _clean_nan(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean_nan(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean_nan(v) for v in obj]
    return obj


def report_rows(results_text: str) -> list:
    """Collapse a results CSV into the throughput / avg delay / p95 delay panels.

    One row per (point, value): flow-averaged metrics in Mbps and ms.
    """
    reader = csv.DictReader(io.StringIO(results_text))
    if reader.fieldnames is None or "avg_frame_delay_s" not in reader.fieldnames:
        raise ValidationError("not an xrtraffic results CSV")
    groups: dict = {}
    for row in reader:
        if row["schema"] != RESULTS_SCHEMA:
            raise ValidationError(f"unsupported results schema {row['schema']!r}")
        groups.setdefault((int(row["point"]), row["variable"], float(row["value"])), []).append(row)
    out = []
    for (point, variable, value), rows in sorted(groups.items()):
        ok = [r for r in rows if not r["error"]]
        avg = lambda k: sum(float(r[k]) for r in ok) / len(ok) if ok else float("nan")  # noqa: E731
        out.append({
            "point": point, "variable": variable, "value": value,
            "throughput_mbps": avg("avg_throughput_bps") / 1e6,
            "avg_delay_ms": avg("avg_frame_delay_s") * 1e3,
            "p95_delay_ms": avg("p95_frame_delay_s") * 1e3,
            "status": rows[0]["status"],
        })
    return out


def report_csv(rows: list) -> str:
    buf = io.StringIO()
    cols = ("point", "variable", "value", "throughput_mbps", "avg_delay_ms", "p95_delay_ms", "status")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_num(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
    return buf.getvalue()
