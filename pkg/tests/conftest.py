from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"

_CRITERIA: dict[int, str] = {}


@pytest.fixture(scope="session")
def snips_mini() -> Path:
    """Frozen 32/14/14 Snips-format split produced by ``synthetic.generate``."""
    return DATA / "snips_mini"


@pytest.fixture(scope="session")
def criterion():
    """Record one status line per acceptance criterion for the terminal summary."""

    def record(number: int, title: str, status: str, detail: str) -> None:
        _CRITERIA[number] = f"[{status}] criterion {number}: {title} -- {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])
