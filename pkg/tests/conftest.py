import numpy as np
import pytest

from greedypixel.models import dominant_channel_linear, random_linear, random_tinyconv


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def dominant_model():
    return dominant_channel_linear((3, 16, 16))


@pytest.fixture(scope="session")
def small_linear():
    return random_linear((3, 4, 4), 3, seed=7)


@pytest.fixture(scope="session")
def small_conv():
    return random_tinyconv((3, 8, 8), 3, 8, seed=11)


_CRITERIA_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the test still asserts on ``ok`` itself."""
    lines = request.config.stash.setdefault(_CRITERIA_KEY, [])

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        print(line)
        lines.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
