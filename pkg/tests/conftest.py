import os

import pytest

from ssamc.sampler import make_rng


def acceptance_profile() -> str:
    """``full`` (default) or ``smoke``, from ``SSAMC_ACCEPTANCE_PROFILE``."""
    profile = os.environ.get("SSAMC_ACCEPTANCE_PROFILE", "full").lower()
    if profile not in ("full", "smoke"):
        raise ValueError(f"SSAMC_ACCEPTANCE_PROFILE must be full or smoke, got {profile!r}")
    return profile


@pytest.fixture
def rng():
    return make_rng(20240601, 0)


ACCEPTANCE_LINES = []


def record_criterion(label: str, passed: bool, detail: str) -> str:
    line = f"criterion {label}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section(f"acceptance criteria ({acceptance_profile()} profile)")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
