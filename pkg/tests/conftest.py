import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "psfcal", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("psfcal")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def conv_oracle(img, k):
    """Nested-loop true convolution with edge replication."""
    h, w = img.shape
    s = k.shape[0]
    r = s // 2
    out = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for u in range(s):
                for v in range(s):
                    yy = min(max(y + r - u, 0), h - 1)
                    xx = min(max(x + r - v, 0), w - 1)
                    acc += k[u, v] * img[yy, xx]
            out[y, x] = acc
    return out


def random_kernel(rng, side):
    k = rng.random((side, side)) ** 3
    return k / k.sum()


# one verdict line per acceptance criterion, shown in the terminal summary
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
