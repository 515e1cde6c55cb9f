import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion_log():
    """Append one summary line per acceptance criterion."""
    def log(number: int, title: str, passed: bool, detail: str):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}  ({detail})"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return passed
    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
