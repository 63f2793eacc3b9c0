import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def taylor_expm(m, order=40):
    """Scaling-and-squaring with a plain truncated Taylor series (test oracle)."""
    m = np.asarray(m, dtype=complex)
    norm = np.linalg.norm(m, 1)
    s = max(0, int(np.ceil(np.log2(norm / 0.25))) if norm > 0 else 0)
    a = m / 2 ** s
    out = np.eye(m.shape[0], dtype=complex)
    term = np.eye(m.shape[0], dtype=complex)
    for k in range(1, order + 1):
        term = term @ a / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def normal_pdf(z, mean, sigma):
    return np.exp(-((z - mean) ** 2) / (2 * sigma ** 2)) / np.sqrt(2 * np.pi * sigma ** 2)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
