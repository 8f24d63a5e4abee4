import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS: list[tuple[str, bool, str]] = []


class CriterionRecorder:
    """Collects one verdict line per acceptance criterion."""

    def __call__(self, cid: str, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {cid}: {detail}"
        print(line)
        _RESULTS.append((cid, bool(passed), detail))


@pytest.fixture(scope="session")
def criterion():
    return CriterionRecorder()


@pytest.fixture(scope="session")
def m2():
    from vortexnoise.fields import make_mollifier
    return make_mollifier(d=2)


@pytest.fixture(scope="session")
def m3():
    from vortexnoise.fields import make_mollifier
    return make_mollifier(d=3)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid, passed, detail in _RESULTS:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {cid}: {detail}")
