"""Collects acceptance verdicts and prints them after the run."""

import time

import pytest

_LINES: dict[int, str] = {}


class Verdict:
    """Times one criterion and records a PASS/FAIL line for it."""

    def __init__(self, number: int, title: str, budget: float):
        self.number, self.title, self.budget = number, title, budget
        self.start = time.perf_counter()

    def __call__(self, passed: bool, detail: str):
        elapsed = time.perf_counter() - self.start
        ok = bool(passed) and elapsed < self.budget
        line = (f"[{'PASS' if ok else 'FAIL'}] criterion {self.number}: {self.title}: {detail} "
                f"({elapsed:.1f} s, budget {self.budget:g} s)")
        _LINES[self.number] = line
        print(line)
        assert passed, line
        assert elapsed < self.budget, line

    @staticmethod
    def skip(number: int, title: str, reason: str):
        _LINES[number] = f"[SKIP] criterion {number}: {title}: {reason}"
        pytest.skip(reason)


@pytest.fixture
def verdict():
    return Verdict


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_LINES):
        terminalreporter.write_line(_LINES[k])
