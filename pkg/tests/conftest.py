import pytest

# verdict lines recorded by the acceptance suite, echoed at the end of the run
VERDICTS = []


@pytest.fixture
def verdict():
    def record(label, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
        VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
