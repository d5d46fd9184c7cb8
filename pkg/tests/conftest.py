import pytest


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def acceptance_log(pytestconfig):
    """Record one PASS/FAIL line per acceptance criterion."""

    def log(number: int, ok: bool, detail: str) -> bool:
        line = f"acceptance {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        pytestconfig._acceptance_lines.append(line)
        return ok

    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
