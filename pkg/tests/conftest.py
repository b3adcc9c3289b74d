import pytest

_RESULTS: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def record():
    """record(criterion, name, passed, detail) -- collected for the terminal summary."""

    def _record(num: int, name: str, passed: bool, detail: str = "") -> None:
        _RESULTS[num] = (name, bool(passed), detail)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_RESULTS):
        name, ok, detail = _RESULTS[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d} {name}: {detail}")
