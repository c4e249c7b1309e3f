import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Record a PASS/FAIL line for an acceptance criterion.

    Call the fixture with the criterion label and a detail string; the line
    is settled after the test body runs.
    """
    state = {}

    def record(label, detail=""):
        state["label"], state["detail"] = label, detail

    yield record
    if "label" in state:
        report = getattr(request.node, "rep_call", None)
        verdict = "PASS" if report is not None and report.passed else "FAIL"
        line = f"{verdict} {state['label']}: {state['detail']}"
        ACCEPTANCE_LINES.append(line)
        print("\n" + line)


@pytest.hookimpl(wrapper=True, tryfirst=True)
def pytest_runtest_makereport(item, call):
    report = yield
    if report.when == "call":
        item.rep_call = report
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
