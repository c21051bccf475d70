import json
from pathlib import Path

import pytest

from xrtraffic.campaign import build_campaign, load_campaign, parse_rate
from xrtraffic.cli import main
from xrtraffic.errors import ValidationError
from xrtraffic.model import AppProfile, StreamConfig, format_profile, get_profile, synthesize_trace
from xrtraffic.protocol import PAYLOAD_SIZE, deserialize_fragments, reassemble
from xrtraffic.trace import read_trace, write_trace

CAMPAIGNS = Path(__file__).resolve().parent.parent / "campaigns"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.mark.parametrize("text,value", [("30M", 30e6), ("140k", 140e3), ("5e6", 5e6),
                                        (1000, 1000.0), ("1.5G", 1.5e9), ("50Mbps", 50e6)])
def test_parse_rate(text, value):
    assert parse_rate(text) == value


def test_parse_rate_bad():
    with pytest.raises(ValidationError):
        parse_rate("fast")


def test_synthesize(tmp_path, capsys):
    out = tmp_path / "t.csv"
    code, stdout, _ = run(capsys, "synthesize", "--app", "virus-popper", "--fps", 60, "--rate", "30M",
                          "--duration", 60, "--seed", 1, "--out", out)
    assert code == 0
    tr = read_trace(out)
    assert 3400 <= len(tr) <= 3800
    assert f"frames={len(tr)}" in stdout
    assert tr.metadata.app == "Virus Popper" and tr.metadata.seed == 1


def test_synthesize_bad_fps(tmp_path, capsys):
    code, _, err = run(capsys, "synthesize", "--app", "virus-popper", "--fps", 90, "--rate", "30M",
                       "--duration", 1, "--out", tmp_path / "x.csv")
    assert code == 2
    assert "code=unsupported-frame-rate" in err and "30 and 60" in err
    assert not (tmp_path / "x.csv").exists()


def test_synthesize_extrapolation_warns(tmp_path, capsys):
    code, _, err = run(capsys, "synthesize", "--app", "minecraft", "--fps", 30, "--rate", "80M",
                       "--duration", 2, "--out", tmp_path / "x.csv")
    assert code == 0
    assert err.startswith("WARN code=rate-out-of-range")


def test_synthesize_unknown_app(tmp_path, capsys):
    code, _, err = run(capsys, "synthesize", "--app", "nope", "--fps", 30, "--rate", "20M",
                       "--duration", 2, "--out", tmp_path / "x.csv")
    assert code == 2 and "unknown-profile" in err


def test_synthesize_profile_file_and_env(tmp_path, capsys, monkeypatch):
    prof = AppProfile("Custom", 0.2, -0.2, 0.04, 0.01, 0.2)
    (tmp_path / "custom.profile").write_text(format_profile(prof))
    code, *_ = run(capsys, "synthesize", "--app", tmp_path / "custom.profile", "--fps", 30, "--rate", "20M",
                   "--duration", 2, "--out", tmp_path / "a.csv")
    assert code == 0 and read_trace(tmp_path / "a.csv").metadata.app == "Custom"
    monkeypatch.setenv("XRTRAFFIC_PROFILE_DIR", str(tmp_path))
    code, *_ = run(capsys, "synthesize", "--app", "custom", "--fps", 30, "--rate", "20M",
                   "--duration", 2, "--out", tmp_path / "b.csv")
    assert code == 0 and read_trace(tmp_path / "b.csv").metadata.app == "Custom"


def test_usage_error_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synthesize"])
    assert exc.value.code == 2


def test_synthesize_then_analyze_round_trip(tmp_path, capsys):
    out = tmp_path / "t.csv"
    run(capsys, "synthesize", "--app", "ge-vr-tour", "--fps", 30, "--rate", "25M",
        "--empirical-rate", "26.5M", "--duration", 20, "--seed", 5, "--out", out)
    code, stdout, _ = run(capsys, "analyze", out)
    assert code == 0
    doc = json.loads(stdout)
    cfg = StreamConfig(get_profile("ge-vr-tour"), 30, 25e6, 20.0, seed=5, empirical_rate=26.5e6)
    written = synthesize_trace(cfg).metadata
    md = doc["metadata"]
    assert md["measured_rate_bps"] == written.measured_rate_bps
    assert md["target_rate_bps"] == written.target_rate_bps
    assert md["rate_in_use_bps"] == 26.5e6
    assert md["seed"] == 5 and md["fps"] == 30 and md["app"] == "GE VR Tour"
    assert doc["fit"]["fs_location"] == pytest.approx(26.5e6 / 240)


def test_analyze_missing_file(tmp_path, capsys):
    code, _, err = run(capsys, "analyze", tmp_path / "missing.csv")
    assert code == 1


def _write_grid(tmp_path, profile, n=20_000, fps_set=(30, 60)):
    for i, rate in enumerate((10, 20, 30, 40, 50)):
        for fps in fps_set:
            tr = synthesize_trace(StreamConfig(profile, fps, rate * 1e6, 1.0, seed=i * 100 + fps), n_frames=n)
            write_trace(tr, tmp_path / f"{profile.slug}_{rate}M_{fps}fps.csv")


def test_calibrate(tmp_path, capsys):
    cities = get_profile("GE VR Cities")
    _write_grid(tmp_path, cities, n=100_000)
    code, stdout, _ = run(capsys, "calibrate", str(tmp_path / "*.csv"), "--out", tmp_path / "p.profile",
                          "--report", tmp_path / "r.json", "--plot-data", tmp_path / "plot.csv")
    assert code == 0
    from xrtraffic.model import load_profile

    p = load_profile(tmp_path / "p.profile")
    assert abs(p.alpha / cities.alpha - 1) < 0.05 and abs(p.beta / cities.beta - 1) < 0.05
    report = json.loads((tmp_path / "r.json").read_text())
    assert len(report["traces"]) == 10 and all("fs_ks" in t for t in report["traces"])
    assert (tmp_path / "plot.csv").read_text().startswith("series,fps,rate_mbps,dispersion,kind")


def test_calibrate_empty_glob(tmp_path, capsys):
    code, _, err = run(capsys, "calibrate", str(tmp_path / "*.csv"), "--out", tmp_path / "p",
                       "--report", tmp_path / "r.json")
    assert code == 2 and "insufficient-data" in err


def test_calibrate_mixed_apps(tmp_path, capsys):
    _write_grid(tmp_path, get_profile("GE VR Cities"), n=500)
    _write_grid(tmp_path, get_profile("Minecraft"), n=500)
    code, _, err = run(capsys, "calibrate", str(tmp_path / "*.csv"), "--out", tmp_path / "p",
                       "--report", tmp_path / "r.json")
    assert code == 2 and "different applications" in err


def test_calibrate_missing_cells(tmp_path, capsys):
    _write_grid(tmp_path, get_profile("GE VR Cities"), n=500, fps_set=(60,))
    code, _, err = run(capsys, "calibrate", str(tmp_path / "*.csv"), "--out", tmp_path / "p",
                       "--report", tmp_path / "r.json")
    assert code == 2 and "30 FPS" in err


def test_fragment(tmp_path, capsys):
    trace_path = tmp_path / "t.csv"
    run(capsys, "synthesize", "--app", "virus-popper", "--fps", 30, "--rate", "50M",
        "--duration", 1, "--seed", 2, "--out", trace_path)
    code, stdout, _ = run(capsys, "fragment", trace_path, "--out", tmp_path / "f.bin",
                          "--staircase", tmp_path / "s.csv")
    assert code == 0
    frags = deserialize_fragments((tmp_path / "f.bin").read_bytes())
    tr = read_trace(trace_path)
    by_frame = {}
    for f in frags:
        by_frame.setdefault(f.frame_seq, []).append(f)
    assert [reassemble(v).size for _, v in sorted(by_frame.items())] == tr.sizes.tolist()
    rows = (tmp_path / "s.csv").read_text().splitlines()[1:]
    assert all(int(r.split(",")[3]) % PAYLOAD_SIZE == 0 for r in rows)


def test_campaign_parsing():
    camp = load_campaign(CAMPAIGNS / "arena_users.yaml")
    assert [len(p.flows) for p in camp.points] == list(range(1, 9))
    s = camp.points[0].flows[0].stream
    assert s.rate_in_use == pytest.approx(53.5e6)
    assert len(camp.seeds) == 10
    rates = load_campaign(CAMPAIGNS / "single_user_rates.yaml")
    assert [p.flows[0].stream.target_rate for p in rates.points] == [10e6, 20e6, 30e6, 40e6, 50e6]


@pytest.mark.parametrize("raw", [
    {"flow": {"app": "minecraft", "fps": 30, "rate": "10M"}},  # no duration
    {"duration": 1, "flow": {"app": "minecraft", "fps": 30}},
    {"duration": 1, "flow": {"app": "minecraft", "fps": 30, "rate": "10M", "colour": 1}},
    {"duration": 1, "flow": {"app": "minecraft", "fps": 30, "rate": "10M"}, "link": {"mtu": 3}},
    {"duration": 1, "flow": {"app": "minecraft", "fps": 30, "rate": "10M", "rate_mode": "empirical"}},
    {"duration": 1, "flow": {"app": "minecraft", "fps": 30, "rate": "10M"}, "sweep": {"variable": "x", "values": [1]}},
    {"duration": 1, "flow": {"app": "minecraft", "fps": 30, "rate": "10M"}, "schema": "other/9"},
])
def test_campaign_errors(raw):
    with pytest.raises(ValidationError):
        build_campaign(raw)


def _small_campaign(tmp_path, users=(1, 8), duration=20):
    text = f"""
name: t
duration: {duration}
seeds: [1, 2]
flow: {{app: ge-vr-cities, fps: 30, rate: 50M, rate_mode: empirical, empirical_factor: 1.07}}
sweep: {{variable: users, values: {list(users)}}}
"""
    path = tmp_path / "c.yaml"
    path.write_text(text)
    return path


def test_sweep_and_report(tmp_path, capsys):
    cfg = _small_campaign(tmp_path)
    code, stdout, _ = run(capsys, "sweep", cfg, "--out-dir", tmp_path / "out")
    assert code == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["schema"] == "xrtraffic.summary/1"
    assert [p["status"] for p in summary["points"]] == ["OK", "UNSTABLE"]
    results = (tmp_path / "out" / "results.csv").read_text()
    assert results.splitlines()[0].startswith("schema,point,variable,value,flow")
    assert len(results.splitlines()) == 1 + 1 + 8
    code, *_ = run(capsys, "report", tmp_path / "out" / "results.csv", "--out", tmp_path / "panels.csv")
    assert code == 0
    panels = (tmp_path / "panels.csv").read_text().splitlines()
    assert panels[0] == "point,variable,value,throughput_mbps,avg_delay_ms,p95_delay_ms,status"
    assert len(panels) == 3


def test_simulate_runs_base_point(tmp_path, capsys):
    cfg = _small_campaign(tmp_path)
    code, stdout, _ = run(capsys, "simulate", cfg, "--out-dir", tmp_path / "out")
    assert code == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert len(summary["points"]) == 1 and summary["points"][0]["flows"] == 1


def test_sweep_failed_point_exit_code(tmp_path, capsys, monkeypatch):
    import xrtraffic.netsim as netsim
    from xrtraffic.errors import NoConvergence

    real = netsim.run_simulation

    def flaky(link, flows, duration, seed=0):
        if flows[0].stream.target_rate > 30e6:
            raise NoConvergence("boom", bracket=(0, 1), iterations=1)
        return real(link, flows, duration, seed)

    monkeypatch.setattr(netsim, "run_simulation", flaky)
    path = tmp_path / "c.yaml"
    path.write_text("duration: 5\nflow: {app: ge-vr-cities, fps: 30, rate: 50M}\n"
                    "sweep: {variable: rate, values: [20M, 40M]}\n")
    code, _, err = run(capsys, "sweep", path, "--out-dir", tmp_path / "out")
    assert code == 1
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert [p["status"] for p in summary["points"]] == ["OK", "FAILED"]


def test_bad_campaign_exit_2(tmp_path, capsys):
    path = tmp_path / "c.yaml"
    path.write_text("duration: [\n")
    code, _, err = run(capsys, "sweep", path, "--out-dir", tmp_path / "out")
    assert code == 2


def test_report_rejects_foreign_csv(tmp_path, capsys):
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    code, _, _ = run(capsys, "report", tmp_path / "x.csv", "--out", tmp_path / "o.csv")
    assert code == 2
