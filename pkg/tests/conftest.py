import pytest

_LINES: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def report():
    """Record one pass/fail line for an acceptance criterion."""

    def _record(key: str, ok: bool, detail: str) -> bool:
        _LINES[key] = (bool(ok), detail)
        print(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
        return bool(ok)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_LINES):
        ok, detail = _LINES[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
