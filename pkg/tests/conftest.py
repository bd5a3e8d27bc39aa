import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("ci", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("dev", max_examples=20, deadline=None)
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def arm():
    from armtune.arm_env import load_arm_model

    return load_arm_model()


ACCEPTANCE_LINES: dict = {}


def record_acceptance(number: int, passed: bool | None, detail: str) -> None:
    """Register the one-line verdict for an acceptance criterion."""
    verdict = {True: "PASS", False: "FAIL", None: "GATED"}[passed]
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {verdict}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
