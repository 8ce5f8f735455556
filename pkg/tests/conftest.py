import re

import pytest

ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """Record an acceptance outcome under keys like ``"4"`` or ``"6b"``."""
    results = request.config.stash[ACCEPTANCE]

    def record(key, passed, detail):
        results[key] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    grouped = {}
    for key in sorted(results):
        number = int(re.match(r"\d+", key).group())
        grouped.setdefault(number, []).append(key)
    terminalreporter.section("acceptance criteria")
    for number in sorted(grouped):
        keys = grouped[number]
        ok = all(results[k][0] for k in keys)
        if len(keys) == 1:
            detail = results[keys[0]][1]
        else:
            detail = "; ".join(f"({k[-1]}) {'pass' if results[k][0] else 'FAIL'}: {results[k][1]}" for k in keys)
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
