from pathlib import Path

import numpy as np
import pytest

from xaffine.imgio import read_image
from xaffine.synthetic import textured_image

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def astronaut():
    return read_image(DATA / "astronaut.png")


@pytest.fixture(scope="session")
def camera():
    return read_image(DATA / "camera.png")


@pytest.fixture(scope="session")
def texture():
    return textured_image(512, seed=0)


@pytest.fixture(scope="session")
def small_texture():
    return textured_image(256, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance():
    """``report(tag, status, detail)`` records one acceptance line; status is PASS, FAIL or SKIP."""

    def report(tag, status, detail):
        if isinstance(status, (bool, np.bool_)):
            status = "PASS" if status else "FAIL"
        line = f"[{status}] {tag}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return status

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
