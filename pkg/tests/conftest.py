import pytest

from hestonmlmc.model import ModelParams, Payoff


@pytest.fixture
def paper_params():
    return ModelParams(mu=1.0, alpha=2.5, beta=1.0, x0=1.0, t_end=1.0)


@pytest.fixture
def call():
    return Payoff.call(0.05)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion."""
    state = {}

    def report(number, title, passed, detail=""):
        state.update(number=number, title=title, passed=bool(passed), detail=detail)
        return passed

    yield report
    if state:
        failed = getattr(request.node, "rep_call", None)
        passed = state["passed"] and not (failed is not None and failed.failed)
        line = f"criterion {state['number']:>2} {'PASS' if passed else 'FAIL'}  {state['title']}  {state['detail']}"
        ACCEPTANCE_LINES.append((state["number"], line))
        print(line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
