"""Synthesis, calibration, fragmentation and shared-link simulation of
cloud-XR downlink video traffic."""

__version__ = "0.1.0"

from .analysis import (  # noqa: E402
    calibrate_profile,
    fit_constant,
    fit_logistic_scale,
    fit_power_law,
    ks_statistic,
    summarize,
)
from .model import (  # noqa: E402
    AppProfile,
    LogisticParams,
    StreamConfig,
    derive_targets,
    frame_size_dispersion,
    get_profile,
    ifi_dispersion,
    list_profiles,
    logistic_quantile,
    register_profile,
    synthesize_trace,
)
from .netsim import FlowSpec, LinkSpec, percentile, run_simulation, simulate, sweep  # noqa: E402
from .protocol import fragment_frame, reassemble  # noqa: E402
from .trace import FrameRecord, Trace, read_trace, write_trace  # noqa: E402
