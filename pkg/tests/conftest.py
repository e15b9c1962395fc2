import pytest

ACCEPTANCE_LINES: list = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion (echoed in the terminal summary)."""
    def record(n: int, name: str, ok: bool, detail: str = "", seconds: float | None = None):
        t = f" [{seconds:.1f}s]" if seconds is not None else ""
        line = f"criterion {n:2d} {name}: {'PASS' if ok else 'FAIL'}{t} {detail}".rstrip()
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
