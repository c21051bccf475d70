import numpy as np
import pytest

from xrtraffic.model import BUILTIN_PROFILES, StreamConfig, get_profile


@pytest.fixture
def virus_popper():
    return get_profile("Virus Popper")


@pytest.fixture
def ge_cities():
    return get_profile("GE VR Cities")


@pytest.fixture(params=BUILTIN_PROFILES, ids=lambda p: p.slug)
def builtin_profile(request):
    return request.param


def make_config(profile, fps=60, rate=30e6, duration=60.0, seed=1, **kw):
    return StreamConfig(profile, fps, rate, duration, seed=seed, **kw)


def truncated_logistic_cdf(loc, scale, lower):
    """Independent closed-form CDF of a logistic conditioned on x > lower."""
    def cdf(x):
        x = np.asarray(x, dtype=float)
        raw = 1.0 / (1.0 + np.exp(-(x - loc) / scale))
        low = 1.0 / (1.0 + np.exp(-(lower - loc) / scale))
        return np.clip((raw - low) / (1.0 - low), 0.0, 1.0)
    return cdf
