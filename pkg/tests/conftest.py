import re

import pytest

from ctregion.phantom import build_phantom

# criterion number -> (slug, outcome)
_acceptance_results: dict[int, tuple[str, str]] = {}

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


@pytest.fixture(scope="session")
def phantom32():
    """Phantom sized so the default encoder grid yields the 356-token case."""
    return build_phantom(dims=(32, 36, 36), spacing=(2.0, 1.0, 1.0), seed=3)


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    num = int(m.group(1))
    slug = m.group(2)
    if report.when == "call":
        _acceptance_results[num] = (slug, report.outcome)
    elif report.when == "setup" and report.outcome != "passed":
        _acceptance_results[num] = (slug, report.outcome)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_acceptance_results):
        slug, outcome = _acceptance_results[num]
        status = {"passed": "PASS", "skipped": "SKIP"}.get(outcome, "FAIL")
        terminalreporter.write_line(f"criterion {num:2d} [{status}] {slug}")
