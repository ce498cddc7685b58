import pytest

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    n = marker.args[0]
    detail = dict(item.user_properties).get("detail", "")
    prev = _CRITERIA.get(n)
    passed = report.passed and (prev is None or prev[0])
    details = [d for d in (prev[1] if prev else "", detail) if d]
    _CRITERIA[n] = (passed, "; ".join(dict.fromkeys(details)))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        passed, detail = _CRITERIA[n]
        line = f"criterion {n}: {'PASS' if passed else 'FAIL'}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)
