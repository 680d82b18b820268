import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile('default', deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile('default')


def random_stable(rng, n, radius=0.9):
    """Random matrix rescaled to spectral radius ``radius``."""
    A = rng.standard_normal((n, n))
    return A * (radius / np.max(np.abs(np.linalg.eigvals(A))))


def random_spd(rng, n, floor=0.1):
    M = rng.standard_normal((n, n))
    return M @ M.T + floor * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the test still asserts on ``passed``."""
    def report(number, title, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} | {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section('acceptance criteria')
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
