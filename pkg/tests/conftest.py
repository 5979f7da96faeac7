import pytest

_outcomes = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    failed = report.failed
    if report.when == "call" or failed:
        prev = _outcomes.get(n)
        detail = dict(item.user_properties).get("detail", "")
        state = "FAIL" if failed or (prev and prev[0] == "FAIL") else "PASS"
        _outcomes[n] = (state, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        state, title, detail = _outcomes[n]
        line = f"criterion {n:>2} {state}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
