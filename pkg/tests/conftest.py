import pytest

# filled by tests/test_acceptance.py: criterion -> (passed, line)
ACCEPTANCE_LINES: dict[int, tuple[bool | None, str]] = {}


@pytest.fixture
def record_criterion():
    """Record and print one pass/fail line for an acceptance criterion."""

    def record(number: int, passed: bool | None, detail: str):
        tag = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
        line = f"[{tag}] criterion {number}: {detail}"
        ACCEPTANCE_LINES[number] = (passed, line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number][1])
