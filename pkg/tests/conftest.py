from collections import defaultdict

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from romforge.mesh import build_channel_mesh

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> [(part, passed, detail)], filled by the acceptance suite
_ACCEPTANCE = defaultdict(list)


@pytest.fixture
def channel():
    return build_channel_mesh(1.0, 0.2, 10, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def acceptance():
    """``record(criterion, part, passed, detail)``; record before asserting."""

    def record(criterion, part, passed, detail=""):
        _ACCEPTANCE[criterion].append((part, bool(passed), detail))
        print(f"criterion {criterion} [{part}]: {'PASS' if passed else 'FAIL'} {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE):
        parts = _ACCEPTANCE[crit]
        ok = all(p[1] for p in parts)
        terminalreporter.write_line(f"CRITERION {crit}: {'PASS' if ok else 'FAIL'}")
        for part, passed, detail in parts:
            terminalreporter.write_line(
                f"    {part}: {'pass' if passed else 'FAIL'}  {detail}")
