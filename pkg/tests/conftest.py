import pytest

# name -> (passed, detail); filled by the acceptance tests through the ``criterion`` fixture.
CRITERIA = {}


class Criterion:
    def __init__(self, name: str):
        self.name = name
        self.detail = ""

    def note(self, detail: str) -> None:
        self.detail = detail


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    c = Criterion(marker.args[0] if marker else request.node.name)
    yield c
    rep = getattr(request.node, "rep_call", None)
    passed = rep is not None and rep.passed
    CRITERIA[c.name] = (passed, c.detail)
    print(f"\n{'PASS' if passed else 'FAIL'} {c.name}: {c.detail}")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep
        # An xfail is reported as skipped, so it counts as a failed criterion;
        # a non-strict xpass stays "passed".


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, (passed, detail) in CRITERIA.items():
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
