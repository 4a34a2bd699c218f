import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def grid():
    from taa_onet.insult import CylindricalGrid

    return CylindricalGrid()


@pytest.fixture(scope="session")
def params():
    from taa_onet.vessel import MaterialParams

    return MaterialParams()


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, recorded through ``record_property("acceptance", ...)``."""
    lines = {}
    for reports in terminalreporter.stats.values():
        for rep in reports:
            if getattr(rep, "when", None) != "call":
                continue
            for key, info in getattr(rep, "user_properties", []):
                if key == "acceptance":
                    verdict = "PASS" if rep.passed else "FAIL"
                    lines[info["n"]] = f"criterion {info['n']:>2} {verdict}  {info['title']}: {info.get('detail', '')}"
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
