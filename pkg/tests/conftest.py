import numpy as np
import pytest

from resalign.field import DisplacementField


def smooth_random_field(dims, amplitude, seed, sigma=3.0):
    """Band-limited random displacement field with max |component| about ``amplitude``."""
    from scipy import ndimage

    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((3,) + tuple(dims))
    out = np.stack([ndimage.gaussian_filter(c, sigma, mode="wrap") for c in raw])
    out *= amplitude / np.abs(out).max()
    return DisplacementField(out)


def interior(arr, margin):
    sl = (slice(margin, -margin),) * 3
    return arr[(Ellipsis,) + sl]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one verdict line per acceptance criterion; printed in the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
