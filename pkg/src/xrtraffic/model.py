"""Application profiles and the generative frame-size / IFI model.

Frame sizes and inter-frame intervals (IFIs) are drawn from logistic
distributions. Their locations are pinned to the ideal values R/(8F) bytes
and 1/F seconds; their scales are ``dispersion * location``, where the
dispersion follows a per-application power law in the data rate (in Mbps):

* frame size:       alpha * rate**beta
* IFI at 60 FPS:    gamma (constant)
* IFI at 30 FPS:    delta * rate**epsilon
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import rng as _rng
from .errors import UnknownProfile, UnsupportedFrameRate, ValidationError
from .trace import Trace, TraceMetadata, measured_rate

SUPPORTED_FPS = (30, 60)
RATE_RANGE_BPS = (10e6, 50e6)
# IFI draws below the trace timestamp resolution are rejected like
# non-positive ones, so timestamps stay strictly increasing at 1 us precision.
MIN_IFI_S = 1e-6
_BLOCK = 4096


@dataclass(frozen=True)
class AppProfile:
    name: str
    alpha: float
    beta: float
    gamma: float
    delta: float
    epsilon: float

    def __post_init__(self):
        for attr in ("alpha", "gamma", "delta"):
            value = getattr(self, attr)
            if not (value > 0 and math.isfinite(value)):
                raise ValidationError(f"profile {self.name!r}: {attr} must be > 0, got {value}")
        for attr in ("beta", "epsilon"):
            if not math.isfinite(getattr(self, attr)):
                raise ValidationError(f"profile {self.name!r}: {attr} must be finite")

    @property
    def slug(self) -> str:
        return slugify(self.name)

    def coefficients(self) -> tuple:
        return (self.alpha, self.beta, self.gamma, self.delta, self.epsilon)


def slugify(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", name.lower()).strip("-")


BUILTIN_PROFILES = (
    AppProfile("Virus Popper", 0.1784, -0.2403, 0.03721, 0.01433, 0.1764),
    AppProfile("Minecraft", 0.1857, -0.1872, 0.07133, 0.02419, 0.2267),
    AppProfile("GE VR Tour", 0.2554, -0.2031, 0.03468, 0.01056, 0.2756),
    AppProfile("GE VR Cities", 0.2597, -0.2539, 0.03457, 0.008953, 0.3119),
)

_registry: dict = {}


def register_profile(profile: AppProfile) -> AppProfile:
    if profile.slug in {p.slug for p in BUILTIN_PROFILES}:
        raise ValidationError(f"cannot override built-in profile {profile.name!r}")
    _registry[profile.slug] = profile
    return profile


def unregister_profile(name: str) -> None:
    _registry.pop(slugify(name), None)


def list_profiles() -> list:
    return list(BUILTIN_PROFILES) + list(_registry.values())


def get_profile(name: str) -> AppProfile:
    key = slugify(name)
    for profile in list_profiles():
        if profile.slug == key:
            return profile
    known = ", ".join(p.slug for p in list_profiles())
    raise UnknownProfile(f"unknown application {name!r} (known: {known})")


_PROFILE_KEYS = ("name", "alpha", "beta", "gamma", "delta", "epsilon")


def format_profile(profile: AppProfile) -> str:
    lines = [f"name={profile.name}"]
    lines += [f"{k}={getattr(profile, k)!r}" for k in _PROFILE_KEYS[1:]]
    return "\n".join(lines) + "\n"


def parse_profile(text: str, source: str = "<string>") -> AppProfile:
    values = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    missing = [k for k in _PROFILE_KEYS if k not in values]
    if missing:
        raise ValidationError(f"{source}: missing profile keys {missing}")
    try:
        coeffs = {k: float(values[k]) for k in _PROFILE_KEYS[1:]}
    except ValueError as exc:
        raise ValidationError(f"{source}: {exc}") from None
    return AppProfile(name=values["name"], **coeffs)


def load_profile(path) -> AppProfile:
    path = Path(path)
    return parse_profile(path.read_text(), source=str(path))


def _check_fps(frame_rate) -> int:
    if frame_rate not in SUPPORTED_FPS:
        raise UnsupportedFrameRate(
            f"frame rate {frame_rate} not supported; only 30 and 60 FPS are modeled"
        )
    return int(frame_rate)


@dataclass(frozen=True)
class StreamConfig:
    """One synthetic stream request.

    ``empirical_rate`` switches the model from the requested (target) rate to
    a measured rate; ``None`` means target-rate mode. ``dispersion_scale``
    multiplies both dispersions and exists for degenerate test streams
    (``0`` gives constant frame sizes and IFIs).
    """

    profile: AppProfile
    frame_rate: int
    target_rate: float
    duration: float
    seed: int = 0
    empirical_rate: Optional[float] = None
    dispersion_scale: float = 1.0

    def __post_init__(self):
        _check_fps(self.frame_rate)
        if not (self.target_rate > 0 and math.isfinite(self.target_rate)):
            raise ValidationError(f"target rate must be > 0 bit/s, got {self.target_rate}")
        if self.empirical_rate is not None and not (
            self.empirical_rate > 0 and math.isfinite(self.empirical_rate)
        ):
            raise ValidationError(f"empirical rate must be > 0 bit/s, got {self.empirical_rate}")
        if not (self.duration > 0 and math.isfinite(self.duration)):
            raise ValidationError(f"duration must be > 0 s, got {self.duration}")
        if self.dispersion_scale < 0:
            raise ValidationError("dispersion_scale must be >= 0")
        _rng.check_seed(self.seed)

    @property
    def rate_mode(self) -> str:
        return "target" if self.empirical_rate is None else "empirical"

    @property
    def rate_in_use(self) -> float:
        return self.target_rate if self.empirical_rate is None else self.empirical_rate

    @property
    def warnings(self) -> tuple:
        lo, hi = RATE_RANGE_BPS
        out = []
        for label, rate in (("target", self.target_rate), ("empirical", self.empirical_rate)):
            if rate is not None and not lo <= rate <= hi:
                out.append(
                    f"rate-out-of-range: {label} rate {rate / 1e6:g} Mbps is outside the "
                    f"fitted 10-50 Mbps range; extrapolating"
                )
        return tuple(out)

    def replace(self, **changes) -> "StreamConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class LogisticParams:
    location: float
    scale: float

    def __post_init__(self):
        if not self.scale >= 0:
            raise ValidationError(f"logistic scale must be >= 0, got {self.scale}")

    @property
    def mean(self) -> float:
        return self.location

    @property
    def std(self) -> float:
        return self.scale * math.pi / math.sqrt(3.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.scale == 0:
            return (x >= self.location).astype(float)
        return 0.5 * (1.0 + np.tanh((x - self.location) / (2.0 * self.scale)))

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.location) / self.scale
        return 1.0 / (self.scale * 4.0 * np.cosh(z / 2.0) ** 2)

    def truncated_cdf(self, lower: float):
        """CDF of this distribution conditioned on ``x > lower``."""
        f_low = float(self.cdf(lower))

        def cdf(x):
            raw = (self.cdf(x) - f_low) / (1.0 - f_low)
            return np.clip(raw, 0.0, 1.0)

        return cdf


@dataclass(frozen=True)
class DerivedTargets:
    fs_location: float
    ifi_location: float
    fs_scale: float
    ifi_scale: float
    fs_dispersion: float
    ifi_dispersion: float

    @property
    def frame_size(self) -> LogisticParams:
        return LogisticParams(self.fs_location, self.fs_scale)

    @property
    def ifi(self) -> LogisticParams:
        return LogisticParams(self.ifi_location, self.ifi_scale)


def frame_size_dispersion(profile: AppProfile, rate_mbps: float) -> float:
    if not rate_mbps > 0:
        raise ValidationError(f"rate must be > 0 Mbps, got {rate_mbps}")
    return profile.alpha * rate_mbps**profile.beta


def ifi_dispersion(profile: AppProfile, frame_rate: int, rate_mbps: float) -> float:
    fps = _check_fps(frame_rate)
    if not rate_mbps > 0:
        raise ValidationError(f"rate must be > 0 Mbps, got {rate_mbps}")
    if fps == 60:
        return profile.gamma
    return profile.delta * rate_mbps**profile.epsilon


def derive_targets(config: StreamConfig) -> DerivedTargets:
    fps = _check_fps(config.frame_rate)
    rate = config.rate_in_use
    fs_loc = rate / (8.0 * fps)
    ifi_loc = 1.0 / fps
    fs_disp = frame_size_dispersion(config.profile, rate / 1e6) * config.dispersion_scale
    ifi_disp = ifi_dispersion(config.profile, fps, rate / 1e6) * config.dispersion_scale
    return DerivedTargets(
        fs_location=fs_loc,
        ifi_location=ifi_loc,
        fs_scale=fs_disp * fs_loc,
        ifi_scale=ifi_disp * ifi_loc,
        fs_dispersion=fs_disp,
        ifi_dispersion=ifi_disp,
    )


def logistic_quantile(params: LogisticParams, u):
    """Inverse CDF: ``location + scale * ln(u / (1 - u))``."""
    u_arr = np.asarray(u, dtype=float)
    if np.any((u_arr <= 0) | (u_arr >= 1)) or np.any(np.isnan(u_arr)):
        raise ValidationError("quantile probability must lie in the open interval (0, 1)")
    out = params.location + params.scale * (np.log(u_arr) - np.log1p(-u_arr))
    return float(out) if np.ndim(out) == 0 else out


class PositiveLogisticSampler:
    """Sequential logistic draws rejected until above ``lower``.

    Uniforms are consumed in fixed-size blocks, so the first ``k`` values
    depend only on the generator state and ``k``, never on how the caller
    chunks its requests.
    """

    def __init__(self, params: LogisticParams, generator: np.random.Generator, lower: float = 0.0):
        if params.scale == 0 and not params.location > lower:
            raise ValidationError("degenerate distribution has no mass above the lower bound")
        self.params = params
        self.lower = lower
        self._gen = generator
        self._values = np.empty(0)
        self._positions = np.empty(0, dtype=np.int64)
        self._drawn = 0
        self._taken = 0

    def _refill(self):
        u = self._gen.random(_BLOCK)
        with np.errstate(divide="ignore"):
            x = self.params.location + self.params.scale * (np.log(u) - np.log1p(-u))
        keep = x > self.lower
        self._positions = np.concatenate([self._positions, np.flatnonzero(keep) + self._drawn])
        self._values = np.concatenate([self._values, x[keep]])
        self._drawn += _BLOCK

    def take(self, k: int) -> np.ndarray:
        while len(self._values) - self._taken < k:
            self._refill()
        out = self._values[self._taken:self._taken + k]
        self._taken += k
        return out

    def rejections_before(self, k: int) -> int:
        """Number of rejected draws preceding the ``k``-th accepted value."""
        if k <= 0:
            return 0
        return int(self._positions[k - 1]) + 1 - k


def synthesize_trace(config: StreamConfig, n_frames: Optional[int] = None) -> Trace:
    """Generate a synthetic trace.

    Frame ``i`` is emitted at the sum of the first ``i + 1`` sampled IFIs.
    Without ``n_frames`` frames are emitted while that time stays within
    ``config.duration``; with it, exactly ``n_frames`` frames are emitted and
    the duration is ignored.
    """
    targets = derive_targets(config)
    sizes_src = PositiveLogisticSampler(
        targets.frame_size, _rng.substream(config.seed, _rng.SIZE_STREAM), lower=0.0
    )
    ifi_src = PositiveLogisticSampler(
        targets.ifi, _rng.substream(config.seed, _rng.IFI_STREAM), lower=MIN_IFI_S
    )

    if n_frames is not None:
        if n_frames < 1:
            raise ValidationError("n_frames must be >= 1")
        times = np.cumsum(ifi_src.take(n_frames))
    else:
        chunks = []
        elapsed = 0.0
        while elapsed <= config.duration:
            chunk = ifi_src.take(_BLOCK)
            chunks.append(chunk)
            elapsed += float(chunk.sum())
        times = np.cumsum(np.concatenate(chunks))
        times = times[times <= config.duration]
        if len(times) == 0:
            raise ValidationError(
                f"duration {config.duration} s is too short to contain a single frame"
            )
    sizes_raw = sizes_src.take(len(times))
    sizes = np.maximum(1, np.rint(sizes_raw)).astype(np.int64)

    metadata = TraceMetadata(
        app=config.profile.name,
        fps=config.frame_rate,
        target_rate_bps=float(config.target_rate),
        measured_rate_bps=measured_rate(times, sizes, config.frame_rate),
        duration_s=float(config.duration),
        seed=config.seed,
        extra={
            "rate_in_use_bps": float(config.rate_in_use),
            "size_rejections": sizes_src.rejections_before(len(times)),
            "ifi_rejections": ifi_src.rejections_before(len(times)),
        },
    )
    return Trace(metadata, times, sizes)
