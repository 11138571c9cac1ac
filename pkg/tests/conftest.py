import time
from contextlib import contextmanager

import pytest


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    Usage::

        with criterion(3, "invariants") as note:
            note["detail"] = "..."
            assert ...
    """
    results = request.config.stash.setdefault(_RESULTS, {})

    @contextmanager
    def run(number: int, title: str):
        note = {"detail": ""}
        t0 = time.perf_counter()
        try:
            yield note
        except BaseException as exc:
            reason = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
            line = f"FAIL criterion {number}: {title} — {note['detail'] or reason}"
            results[number] = line
            print(line)
            raise
        line = f"PASS criterion {number}: {title} — {note['detail']} [{time.perf_counter() - t0:.1f}s]"
        results[number] = line
        print(line)

    return run


_RESULTS = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
