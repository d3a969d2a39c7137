import pytest

ACCEPTANCE = []


@pytest.fixture
def record():
    """Collect one ``(criterion, passed, detail)`` line for the terminal summary.

    ``passed=None`` marks a criterion that is excluded rather than tested.
    """
    def _record(criterion, passed, detail=""):
        status = "EXCLUDED" if passed is None else "PASS" if passed else "FAIL"
        line = f"[{status}] criterion {criterion}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
