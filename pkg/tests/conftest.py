import math
import warnings

import pytest

from poltrans.medium import SpectralMedium

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda s: int(s[2:])):
        terminalreporter.write_line(ACCEPTANCE[key])


@pytest.fixture(autouse=True)
def _quiet_integration_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*roundoff error.*")
        yield


@pytest.fixture
def gauss():
    return SpectralMedium(gamma=2.0 * math.pi / 50.0, alpha=1.0)
