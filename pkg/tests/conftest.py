import numpy as np
import pytest
from scipy import ndimage


def smooth_texture(size, seed, margin=16, sigma=3.0):
    """Random texture blurred to a few-pixel correlation length, scaled to [0, 1]."""
    raw = np.random.default_rng(seed).random((size + 2 * margin, size + 2 * margin))
    tex = ndimage.gaussian_filter(raw, sigma)
    return (tex - tex.min()) / (tex.max() - tex.min())


def shifted_pair(size, shift, seed, margin=16):
    """Two crops of one texture; content moves by ``shift = (dx, dy)`` from the first to the second."""
    tex = smooth_texture(size, seed, margin)
    dx, dy = shift
    a = tex[margin : margin + size, margin : margin + size]
    b = tex[margin - dy : margin - dy + size, margin - dx : margin - dx + size]
    return a, b


@pytest.fixture
def texture():
    return smooth_texture


@pytest.fixture
def pair():
    return shifted_pair


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
