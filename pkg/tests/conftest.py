import pytest

_VERDICTS: list[str] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line; the lines are repeated in the terminal summary."""

    def record(number: int, ok: bool, detail: str, seconds: float, budget: float):
        in_time = seconds <= budget
        line = (f"criterion {number:2d}: {'PASS' if ok and in_time else 'FAIL'}  {detail}  "
                f"[{seconds:.1f}s / budget {budget:.0f}s]")
        print(line)
        _VERDICTS.append(line)
        assert in_time, f"criterion {number} exceeded its time budget"
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
