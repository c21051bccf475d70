"""Command-line front end.

Exit codes: 0 success, 1 runtime or I/O failure, 2 validation failure.
Errors are reported on stderr as ``error: code=<code> message=<text>``.
"""

from __future__ import annotations

import argparse
import csv
import glob
import io
import json
import sys
from pathlib import Path

from . import __version__
from .analysis import calibrate_profile, fit_trace, summarize
from .campaign import (
    build_campaign,
    load_campaign,
    parse_rate,
    report_csv,
    report_rows,
    resolve_profile,
    results_csv,
    summary_json,
)
from .errors import InsufficientData, ValidationError, XRTrafficError
from .model import StreamConfig, format_profile, synthesize_trace
from .netsim import sweep as run_sweep
from .protocol import PAYLOAD_SIZE, WIRE_SIZE, fragment_frame, serialize_fragments
from .trace import atomic_write, read_trace, write_trace

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: code=usage message={message}", file=sys.stderr)
        sys.exit(EXIT_INVALID)


def _warn(text: str) -> None:
    code, _, msg = text.partition(": ")
    print(f"WARN code={code} message={msg}", file=sys.stderr)


def cmd_synthesize(args) -> int:
    profile = resolve_profile(args.app)
    config = StreamConfig(
        profile=profile,
        frame_rate=args.fps,
        target_rate=parse_rate(args.rate),
        duration=args.duration,
        seed=args.seed,
        empirical_rate=parse_rate(args.empirical_rate) if args.empirical_rate else None,
    )
    for w in config.warnings:
        _warn(w)
    trace = synthesize_trace(config)
    write_trace(trace, args.out)
    md = trace.metadata
    print(f"frames={len(trace)} measured_rate_bps={md.measured_rate_bps:.1f} "
          f"size_rejections={md.extra['size_rejections']} "
          f"ifi_rejections={md.extra['ifi_rejections']} out={args.out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    trace = read_trace(args.trace)
    stats = summarize(trace)
    md = trace.metadata
    doc = {
        "metadata": {
            "app": md.app, "fps": md.fps, "target_rate_bps": md.target_rate_bps,
            "measured_rate_bps": md.measured_rate_bps, "duration_s": md.duration_s,
            "seed": md.seed, **md.extra,
        },
        "stats": stats.__dict__,
    }
    if len(trace) >= 11:
        fit = fit_trace(trace)
        doc["fit"] = {
            "fs_location": fit.size_fit.params.location, "fs_scale": fit.size_fit.params.scale,
            "fs_dispersion": fit.size_fit.dispersion, "fs_ks": fit.size_fit.ks,
            "ifi_location": fit.ifi_fit.params.location, "ifi_scale": fit.ifi_fit.params.scale,
            "ifi_dispersion": fit.ifi_fit.dispersion, "ifi_ks": fit.ifi_fit.ks,
        }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.json:
        atomic_write(args.json, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    paths = sorted({p for pattern in args.traces for p in glob.glob(pattern)})
    if not paths:
        raise InsufficientData(f"no trace files match {args.traces}", missing=["any"])
    traces = [read_trace(p) for p in paths]
    apps = sorted({t.metadata.app for t in traces})
    if len(apps) > 1:
        raise ValidationError(f"traces belong to different applications: {apps}")
    report = calibrate_profile(traces, name=args.name, labels=[Path(p).name for p in paths])
    atomic_write(args.out, format_profile(report.profile))
    atomic_write(args.report, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    if args.plot_data:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("series", "fps", "rate_mbps", "dispersion", "kind"))
        w.writerows((s, f, repr(x), repr(y), k) for s, f, x, y, k in report.plot_rows())
        atomic_write(args.plot_data, buf.getvalue())
    p = report.profile
    print(f"name={p.name} alpha={p.alpha:.6g} beta={p.beta:.6g} gamma={p.gamma:.6g} "
          f"delta={p.delta:.6g} epsilon={p.epsilon:.6g} traces={len(traces)}")
    return EXIT_OK


def cmd_fragment(args) -> int:
    trace = read_trace(args.trace)
    frames = trace.frames[: args.limit] if args.limit else trace.frames
    blob = bytearray()
    rows = []
    total = 0
    for frame in frames:
        frags = fragment_frame(frame)
        total += len(frags)
        blob += serialize_fragments(frags)
        rows.append((frame.index, frame.size, len(frags), len(frags) * PAYLOAD_SIZE,
                     len(frags) * WIRE_SIZE))
    atomic_write(args.out, bytes(blob))
    if args.staircase:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("index", "video_bytes", "fragments", "udp_payload_bytes", "wire_bytes"))
        w.writerows(rows)
        atomic_write(args.staircase, buf.getvalue())
    print(f"frames={len(frames)} fragments={total} udp_payload_bytes={total * PAYLOAD_SIZE} "
          f"wire_bytes={total * WIRE_SIZE} out={args.out}")
    return EXIT_OK


def _run_campaign(campaign, out_dir, workers) -> int:
    rows = run_sweep(campaign.points, campaign.seeds, workers=workers)
    out = Path(out_dir)
    atomic_write(out / "results.csv", results_csv(campaign, rows))
    summary = summary_json(campaign, rows)
    atomic_write(out / "summary.json", summary)
    for point in json.loads(summary)["points"]:
        delay = point["avg_frame_delay_s"]
        delay_txt = f"{delay * 1e3:.3f}" if delay is not None else "nan"
        print(f"point={point['point']} {point['variable']}={point['value']:g} "
              f"flows={point['flows']} avg_delay_ms={delay_txt} status={point['status']}")
    return EXIT_RUNTIME if any(r.failed for r in rows) else EXIT_OK


def cmd_simulate(args) -> int:
    campaign = load_campaign(args.config)
    raw = dict(campaign.raw)
    raw.pop("sweep", None)
    return _run_campaign(build_campaign(raw), args.out_dir, 1)


def cmd_sweep(args) -> int:
    return _run_campaign(load_campaign(args.config), args.out_dir, args.workers)


def cmd_report(args) -> int:
    rows = report_rows(Path(args.results).read_text())
    atomic_write(args.out, report_csv(rows))
    print(f"points={len(rows)} out={args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xrtraffic", description="Cloud-XR video traffic toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synthesize", help="generate a synthetic trace CSV")
    p.add_argument("--app", required=True, help="built-in profile, profile file, or name in $XRTRAFFIC_PROFILE_DIR")
    p.add_argument("--fps", type=int, required=True)
    p.add_argument("--rate", required=True, help="target rate, e.g. 30M")
    p.add_argument("--empirical-rate", help="drive the model with this measured rate instead")
    p.add_argument("--duration", type=float, required=True, help="seconds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("analyze", help="summary statistics and logistic fits of a trace")
    p.add_argument("trace")
    p.add_argument("--json", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("calibrate", help="fit a profile from traces of one application")
    p.add_argument("traces", nargs="+", help="trace files or glob patterns")
    p.add_argument("--out", required=True, help="profile key=value file")
    p.add_argument("--report", required=True, help="JSON calibration report")
    p.add_argument("--plot-data", help="CSV of dispersion points and fitted curves")
    p.add_argument("--name", help="profile name (default: the traces' app)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("fragment", help="encode a trace's frames as fragment bursts")
    p.add_argument("trace")
    p.add_argument("--out", required=True, help="length-prefixed fragment file")
    p.add_argument("--staircase", help="CSV of per-frame wire sizes")
    p.add_argument("--limit", type=int, default=0, help="only the first N frames")
    p.set_defaults(func=cmd_fragment)

    p = sub.add_parser("simulate", help="run one campaign point over all seeds")
    p.add_argument("config")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run every point of a campaign")
    p.add_argument("config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="turn results.csv into throughput/delay panel data")
    p.add_argument("results")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: code={exc.code} message={exc}", file=sys.stderr)
        return EXIT_INVALID
    except (XRTrafficError, OSError) as exc:
        code = getattr(exc, "code", "io")
        print(f"error: code={code} message={exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
