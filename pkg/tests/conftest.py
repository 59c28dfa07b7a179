import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    """150 indoor samples (100/30/20) shared by pipeline and trainer tests."""
    from clnet.datasets import generate_dataset

    ds, _ = generate_dataset(150, "indoor", seed=1)
    return ds


# --------------------------------------------------------------------------- acceptance summary lines

_ACCEPTANCE_LINES: list[str] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.call_report = rep


@pytest.fixture
def criterion(request):
    """Collects ``number``, ``title`` and ``detail`` for one acceptance check
    and prints a single PASS/FAIL line once the test body has run."""
    info = {"number": 0, "title": request.node.name, "detail": ""}
    yield info
    rep = getattr(request.node, "call_report", None)
    status = "PASS" if rep is not None and rep.passed else "FAIL"
    line = f"criterion {info['number']} {status}: {info['title']}"
    if info["detail"]:
        line += f" ({info['detail']})"
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
