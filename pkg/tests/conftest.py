from contextlib import contextmanager

import pytest

_LINES = []


class _Record:
    def __init__(self):
        self.details = []

    def note(self, text):
        self.details.append(text)


@pytest.fixture
def criterion():
    """``with criterion(4, "overfit smoke") as rec: ...`` records one PASS/FAIL line."""

    @contextmanager
    def run(number, title):
        rec = _Record()
        try:
            yield rec
        except BaseException as err:
            first = (str(err).splitlines() or [type(err).__name__])[0]
            rec.note(f"error: {first}")
            _emit(number, title, "FAIL", rec)
            raise
        _emit(number, title, "PASS", rec)

    return run


def _emit(number, title, status, rec):
    line = f"[PRIMARY] criterion {number} ({title}): {status}"
    if rec.details:
        line += " | " + "; ".join(rec.details)
    _LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)
