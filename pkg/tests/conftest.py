import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=int(os.environ.get("HYPOTHESIS_MAX_EXAMPLES", 40)),
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# acceptance criterion label -> (outcome, detail)
_ACCEPTANCE: dict[str, list] = {}


@pytest.fixture
def acceptance(request):
    """Record a one-line detail for the acceptance summary of the calling test."""
    entry = _ACCEPTANCE.setdefault(request.node.nodeid, ["FAIL", ""])

    def note(text: str) -> None:
        entry[1] = text

    return note


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    entry = _ACCEPTANCE.setdefault(report.nodeid, ["FAIL", ""])
    if report.when == "call":
        entry[0] = "PASS" if report.passed else "FAIL"
    elif report.failed:
        entry[0] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, (outcome, detail) in sorted(_ACCEPTANCE.items(), key=lambda kv: kv[0]):
        name = nodeid.split("::")[-1]
        line = f"{outcome}  {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
