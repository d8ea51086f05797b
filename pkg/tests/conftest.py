import time
from contextlib import contextmanager

import pytest

# (number, title) -> (passed, seconds, note); filled by the acceptance tests.
_criteria: dict[tuple[int, str], tuple[bool, float, str]] = {}


@pytest.fixture
def criterion():
    """Time a block of acceptance checks and record one pass/fail line for it."""

    @contextmanager
    def check(number: int, title: str, limit: float | None = None):
        note = {"text": ""}
        t0 = time.perf_counter()
        try:
            yield note
        except BaseException as exc:
            _criteria[(number, title)] = (False, time.perf_counter() - t0, str(exc).splitlines()[0] if str(exc) else type(exc).__name__)
            raise
        elapsed = time.perf_counter() - t0
        if limit is not None and elapsed > limit:
            _criteria[(number, title)] = (False, elapsed, f"took longer than {limit:g} s")
            raise AssertionError(f"criterion {number} took {elapsed:.2f} s, limit {limit:g} s")
        _criteria[(number, title)] = (True, elapsed, note["text"])

    return check


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), (ok, seconds, note) in sorted(_criteria.items()):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}  {title}  ({seconds:.2f} s)"
        if note:
            line += f"  {note}"
        terminalreporter.write_line(line)
