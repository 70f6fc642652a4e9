import numpy as np
import pytest

from efrrom.mesh import build_channel_mesh


@pytest.fixture(scope="session")
def small_channel():
    """Coarse channel with an obstacle, cheap enough for per-test solves."""
    return build_channel_mesh(2.2, 0.41, (0.2, 0.2), 0.05, 44, 12)


@pytest.fixture(scope="session")
def straight_channel():
    return build_channel_mesh(1.0, 0.41, (0.0, 0.0), 0.0, 24, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
