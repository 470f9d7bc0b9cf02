import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_state(rng, n, scale=1.0):
    from wildeuler.algebra import StateTriple

    v = rng.normal(size=n) * scale
    a = rng.normal(size=(n, n)) * scale
    u = 0.5 * (a + a.T)
    u -= np.trace(u) / n * np.eye(n)
    return StateTriple(v, u, float(rng.normal() * scale))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
