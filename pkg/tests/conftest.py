import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion id -> (title, outcomes of every test phase that reported one)
_criteria: dict[str, tuple[str, list]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    report = outcome.get_result()
    cid, title = marker.args
    _, outs = _criteria.setdefault(cid, (title, []))
    if report.when == "call" or report.outcome != "passed":
        outs.append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_criteria, key=lambda c: (len(c), c)):
        title, outs = _criteria[cid]
        if "failed" in outs:
            status = "FAIL"
        elif outs and all(o == "skipped" for o in outs):
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"{status:4s}  {cid}  {title}")
