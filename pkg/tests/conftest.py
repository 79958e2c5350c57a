import pytest

_CRITERIA = {}


@pytest.fixture
def criterion():
    """``criterion(k, ok, detail)`` records one acceptance line and asserts."""

    def record(k, ok, detail):
        _CRITERIA[k] = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_CRITERIA[k])
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
