"""Collects the one-line acceptance verdicts and prints them after the run."""
import pytest

_VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict():
    def record(number: int, holds: bool, detail: str) -> bool:
        line = f"{'PASS' if holds else 'FAIL'} criterion {number:2d}: {detail}"
        _VERDICTS[number] = line
        print(line)
        return holds

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[n])
