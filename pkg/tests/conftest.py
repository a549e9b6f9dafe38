import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ringbumps.field_ops import make_frame
from ringbumps.model import sigmoid
from ringbumps.stationary import solve_amplitude

settings.register_profile(
    "ringbumps", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("ringbumps")

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        for line in ACCEPTANCE_LINES[key]:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def bump():
    return solve_amplitude(sigmoid(0.05, 0.5))


@pytest.fixture(scope="session")
def bump01():
    return solve_amplitude(sigmoid(0.1, 0.5))


@pytest.fixture(scope="session")
def frame(bump):
    return make_frame(bump, 0.0)


def smooth_field(rng, m, modes=4, scale=0.1):
    """Random trigonometric polynomial sampled on the quadrature nodes."""
    from ringbumps.model import nodes
    y = nodes(m)
    out = np.zeros(m)
    for k in range(modes + 1):
        a, b = rng.normal(size=2) / (1 + k)
        out += a * np.cos(k * y) + b * np.sin(k * y)
    return scale * out
