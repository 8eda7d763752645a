import pytest

# criterion number -> (passed, detail); filled in by test_acceptance.py
ACCEPTANCE_RESULTS: dict = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[number] = (bool(passed), detail)
    print(f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} - {detail}")


@pytest.fixture
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
