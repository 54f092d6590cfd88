import pathlib
import sys

import numpy as np
import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))

from rbivision.cascade import load_cascade  # noqa: E402
from rbivision.integral import quantize  # noqa: E402

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures():
    return FIXTURES


@pytest.fixture(scope="session")
def alt():
    return load_cascade(FIXTURES / "haarcascade_frontalface_alt.xml")


@pytest.fixture(scope="session")
def qalt(alt):
    return quantize(alt)


@pytest.fixture(scope="session")
def qdefault():
    return quantize(load_cascade(FIXTURES / "haarcascade_frontalface_default.xml"))


@pytest.fixture(scope="session")
def faces_alt():
    return np.load(FIXTURES / "accepted_frontalface_alt.npz")["windows"]


@pytest.fixture(scope="session")
def faces_default():
    return np.load(FIXTURES / "accepted_frontalface_default.npz")["windows"]


_CRITERIA: list = []


@pytest.fixture
def report_criterion(capsys):
    """Print one PASS/FAIL line for an acceptance criterion and keep it for the summary."""
    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
