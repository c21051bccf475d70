"""Empirical statistics, fixed-location logistic fitting, KS scoring and
power-law calibration of application profiles."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .errors import (
    DegenerateInput,
    DegenerateSample,
    EmptyInput,
    EmptySample,
    InsufficientData,
    NoConvergence,
    TooFewFrames,
    ValidationError,
)
from .model import SUPPORTED_FPS, AppProfile, LogisticParams
from .trace import Trace


@dataclass(frozen=True)
class EmpiricalStats:
    n_frames: int
    mean_size: float
    mean_ifi: float
    measured_rate: float
    min_size: float
    max_size: float
    std_size: float
    min_ifi: float
    max_ifi: float
    std_ifi: float


def summarize(trace: Trace) -> EmpiricalStats:
    if len(trace) < 2:
        raise TooFewFrames(f"need at least 2 frames, trace has {len(trace)}")
    sizes = trace.sizes.astype(float)
    ifis = np.diff(trace.times)
    mean_size = float(sizes.mean())
    # span / (n - 1) rather than ifis.mean(): identical in exact arithmetic and
    # independent of any constant added to every timestamp.
    mean_ifi = float(trace.times[-1] - trace.times[0]) / (len(trace) - 1)
    return EmpiricalStats(
        n_frames=len(trace),
        mean_size=mean_size,
        mean_ifi=mean_ifi,
        measured_rate=8.0 * mean_size / mean_ifi,
        min_size=float(sizes.min()),
        max_size=float(sizes.max()),
        std_size=float(sizes.std()),
        min_ifi=float(ifis.min()),
        max_ifi=float(ifis.max()),
        std_ifi=float(ifis.std()),
    )


def ks_statistic(samples, target_cdf: Callable) -> float:
    """One-sample Kolmogorov-Smirnov distance sup |F_e - F_t|.

    Evaluates max(|i/n - F_t(x_i)|, |(i-1)/n - F_t(x_i-)|) over the sorted
    sample. The left limit F_t(x_i-) is taken at the preceding float, which
    equals F_t(x_i) for continuous targets and keeps step-function targets
    (for example another empirical CDF) exact. ``target_cdf`` must accept a
    numpy array. Samples need not be sorted.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n == 0:
        raise EmptySample("KS statistic needs at least one sample")
    if not np.all(np.isfinite(x)):
        raise ValidationError("samples must be finite")
    cdf = np.asarray(target_cdf(x), dtype=float)
    cdf_left = np.asarray(target_cdf(np.nextafter(x, -np.inf)), dtype=float)
    i = np.arange(1, n + 1)
    d_plus = np.abs(i / n - cdf)
    d_minus = np.abs((i - 1) / n - cdf_left)
    return float(min(1.0, max(d_plus.max(), d_minus.max())))


@dataclass(frozen=True)
class FitResult:
    params: LogisticParams
    ks: float
    n: int
    location_was_fixed: bool = True
    iterations: int = 0

    @property
    def dispersion(self) -> float:
        return self.params.scale / self.params.location


def _score(x: np.ndarray, location: float, scale: float) -> float:
    """Derivative of the log-likelihood w.r.t. scale, times scale."""
    z = (x - location) / scale
    return float(np.sum(z * np.tanh(z / 2.0))) - len(x)


def fit_logistic_scale(samples, fixed_location: float, rtol: float = 1e-9,
                       max_iter: int = 200) -> FitResult:
    """Maximum-likelihood logistic scale with the location held fixed.

    Solves d(logL)/ds = 0, i.e. sum(z * tanh(z / 2)) = n with
    z = (x - location) / s. The left side falls monotonically in s, so the
    root is bracketed and refined with an Illinois false-position step that
    falls back to bisection when it stalls.
    """
    x = np.asarray(samples, dtype=float)
    n = len(x)
    if n < 10:
        raise ValidationError(f"need at least 10 samples to fit, got {n}")
    if not math.isfinite(fixed_location):
        raise ValidationError("fixed location must be finite")
    spread = float(np.sqrt(np.mean((x - fixed_location) ** 2)))
    if spread == 0.0:
        raise DegenerateSample("all samples equal the fixed location; scale would be 0")

    lo, hi = 1e-6 * spread, 1e3 * spread
    f_lo, f_hi = _score(x, fixed_location, lo), _score(x, fixed_location, hi)
    if not (f_lo > 0 > f_hi):
        raise NoConvergence("score does not change sign over the bracket", (lo, hi), 0)

    # method-of-moments start, then Illinois false position; a step that
    # fails to halve the bracket forces a bisection next
    s = spread * math.sqrt(3.0) / math.pi
    side = 0
    it = 0
    while hi - lo > rtol * lo:
        if it >= max_iter:
            raise NoConvergence(
                f"scale search did not reach rtol={rtol} in {max_iter} iterations",
                (lo, hi), it,
            )
        it += 1
        width = hi - lo
        f = _score(x, fixed_location, s)
        if f == 0:
            lo = hi = s
            break
        if f > 0:
            lo, f_lo = s, f
            if side == 1:
                f_hi /= 2.0
            side = 1
        else:
            hi, f_hi = s, f
            if side == -1:
                f_lo /= 2.0
            side = -1
        if hi - lo > 0.5 * width and it > 1:
            s = 0.5 * (lo + hi)
        else:
            s = hi - f_hi * (hi - lo) / (f_hi - f_lo)
            if not lo < s < hi:
                s = 0.5 * (lo + hi)
    s = 0.5 * (lo + hi)
    params = LogisticParams(fixed_location, s)
    return FitResult(params, ks_statistic(x, params.cdf), n, True, it)


@dataclass(frozen=True)
class PowerLawFit:
    a: float
    b: float
    residual: float
    constant_mode: bool = False

    def __call__(self, x):
        return self.a * np.asarray(x, dtype=float) ** self.b


def fit_power_law(points) -> PowerLawFit:
    """Ordinary least squares of ln(y) on ln(x); returns y = a * x**b."""
    pts = np.asarray(list(points), dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        raise ValidationError("power-law fit needs at least 2 points")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValidationError("power-law fit needs finite, strictly positive points")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    dx = lx - lx.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateInput("all rates are equal; the exponent is undetermined")
    b = float(dx @ (ly - ly.mean())) / sxx
    intercept = float(ly.mean()) - b * float(lx.mean())
    resid = ly - (intercept + b * lx)
    return PowerLawFit(math.exp(intercept), b, float(np.sqrt(np.mean(resid**2))))


def fit_constant(points) -> PowerLawFit:
    """Mean dispersion across rates, as a power law with exponent 0."""
    pts = np.asarray(list(points), dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise EmptyInput("constant fit needs at least one point")
    y = pts[:, 1]
    a = float(y.mean())
    if not a > 0:
        raise ValidationError("constant fit needs positive dispersions")
    resid = np.log(y) - math.log(a) if np.all(y > 0) else np.full(len(y), np.nan)
    return PowerLawFit(a, 0.0, float(np.sqrt(np.mean(resid**2))), True)


@dataclass(frozen=True)
class TraceFit:
    label: str
    rate_mbps: float
    fps: int
    size_fit: FitResult
    ifi_fit: FitResult


@dataclass(frozen=True)
class CalibrationReport:
    profile: AppProfile
    traces: tuple
    fs_fit: PowerLawFit
    ifi60_fit: PowerLawFit
    ifi30_fit: PowerLawFit

    def to_dict(self) -> dict:
        p = self.profile
        return {
            "schema": "xrtraffic.calibration/1",
            "profile": {
                "name": p.name, "alpha": p.alpha, "beta": p.beta, "gamma": p.gamma,
                "delta": p.delta, "epsilon": p.epsilon,
            },
            "fits": {
                name: {"a": f.a, "b": f.b, "residual": f.residual, "constant_mode": f.constant_mode}
                for name, f in (
                    ("frame_size", self.fs_fit), ("ifi_60fps", self.ifi60_fit),
                    ("ifi_30fps", self.ifi30_fit),
                )
            },
            "traces": [
                {
                    "label": t.label, "rate_mbps": t.rate_mbps, "fps": t.fps,
                    "n": t.size_fit.n,
                    "fs_scale": t.size_fit.params.scale,
                    "fs_dispersion": t.size_fit.dispersion, "fs_ks": t.size_fit.ks,
                    "ifi_scale": t.ifi_fit.params.scale,
                    "ifi_dispersion": t.ifi_fit.dispersion, "ifi_ks": t.ifi_fit.ks,
                }
                for t in self.traces
            ],
        }

    def plot_rows(self, n_curve: int = 41) -> list:
        """Rows of (series, fps, rate_mbps, dispersion, kind) for external plotting."""
        rows = []
        for t in self.traces:
            rows.append(("frame_size", t.fps, t.rate_mbps, t.size_fit.dispersion, "point"))
            rows.append(("ifi", t.fps, t.rate_mbps, t.ifi_fit.dispersion, "point"))
        rates = [t.rate_mbps for t in self.traces]
        grid = np.linspace(min(rates), max(rates), n_curve)
        for x in grid.tolist():
            rows.append(("frame_size", 0, x, float(self.fs_fit(x)), "fit"))
            rows.append(("ifi", 30, x, float(self.ifi30_fit(x)), "fit"))
            rows.append(("ifi", 60, x, float(self.ifi60_fit(x)), "fit"))
        return rows


def fit_trace(trace: Trace, label: str = "") -> TraceFit:
    """Fit both logistic scales of one trace with locations at R/(8F) and 1/F."""
    md = trace.metadata
    if md.fps not in SUPPORTED_FPS:
        raise ValidationError(f"{label or md.app}: unsupported frame rate {md.fps}")
    rate = md.rate_in_use_bps
    size_fit = fit_logistic_scale(trace.sizes, rate / (8.0 * md.fps))
    ifi_fit = fit_logistic_scale(np.diff(trace.times), 1.0 / md.fps)
    return TraceFit(label or f"{md.app}@{rate / 1e6:g}Mbps/{md.fps}fps", rate / 1e6, md.fps,
                    size_fit, ifi_fit)


def calibrate_profile(traces: Iterable[Trace], name: Optional[str] = None,
                      labels: Optional[Iterable[str]] = None) -> CalibrationReport:
    """Regenerate the five profile coefficients from a set of traces.

    Frame-size dispersions of both frame rates are pooled into one power law;
    30 FPS IFI dispersions get their own power law and 60 FPS IFI dispersions
    a constant. All points are weighted equally.
    """
    traces = list(traces)
    labels = list(labels) if labels is not None else [""] * len(traces)
    if not traces:
        raise InsufficientData("no traces given", missing=["any"])
    apps = {t.metadata.app for t in traces}
    if len(apps) > 1 and name is None:
        raise ValidationError(f"traces mix applications {sorted(apps)}; pass an explicit name")

    cells = defaultdict(set)
    for t in traces:
        cells[t.metadata.fps].add(round(t.metadata.rate_in_use_bps / 1e6, 9))
    missing = []
    if len(cells[30]) < 2:
        missing.append(f"30 FPS needs >= 2 distinct rates (have {sorted(cells[30])})")
    if len(cells[60]) < 1:
        missing.append("60 FPS needs >= 1 rate (have none)")
    if len(cells[30] | cells[60]) < 2:
        missing.append("frame size needs >= 2 distinct rates overall")
    if missing:
        raise InsufficientData("insufficient (rate, fps) coverage: " + "; ".join(missing), missing)

    fits = [fit_trace(t, lab) for t, lab in zip(traces, labels)]
    fs_fit = fit_power_law([(f.rate_mbps, f.size_fit.dispersion) for f in fits])
    ifi30 = fit_power_law([(f.rate_mbps, f.ifi_fit.dispersion) for f in fits if f.fps == 30])
    ifi60 = fit_constant([(f.rate_mbps, f.ifi_fit.dispersion) for f in fits if f.fps == 60])
    profile = AppProfile(
        name=name or apps.pop(),
        alpha=fs_fit.a, beta=fs_fit.b, gamma=ifi60.a, delta=ifi30.a, epsilon=ifi30.b,
    )
    return CalibrationReport(profile, tuple(fits), fs_fit, ifi60, ifi30)
