import sys

import numpy as np
import pytest

from sf2se3.geometry import CameraIntrinsics
from sf2se3.synthetic import NoiseSpec, render, three_body_scene


@pytest.fixture
def K():
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, baseline=0.5, width=640, height=480)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def three_body():
    """Noiseless three-body render shared by the slower tests."""
    return render(three_body_scene())


@pytest.fixture(scope="session")
def three_body_noisy():
    return render(three_body_scene(NoiseSpec(0.5, 0.01), rng_seed=0))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
