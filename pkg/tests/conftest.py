import numpy as np
import pytest

from dpgmm_hsi.hsi_io import HsiCube


@pytest.fixture
def small_cube():
    rng = np.random.default_rng(3)
    data = rng.uniform(0.1, 1.0, size=(4, 5, 6)).astype(np.float32)
    data[0, 0] = 0.0
    wl = np.linspace(400.0, 1000.0, 6)
    return HsiCube(data, wl, np.any(data != 0, axis=2))


def make_cube(data, wavelengths=None):
    data = np.asarray(data, dtype=np.float64)
    if wavelengths is None:
        wavelengths = np.linspace(400.0, 1000.0, data.shape[2])
    return HsiCube(data, wavelengths, np.any(data != 0, axis=2))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        ok, detail = results[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
