import pytest

_RESULTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when not in ("setup", "call"):
        return
    number, title = marker.args
    if rep.when == "setup" and rep.passed:
        return
    if hasattr(rep, "wasxfail"):
        verdict = "FAIL (known, xfail)" if rep.skipped else "FAIL (unexpected pass of an xfail)"
    else:
        verdict = "PASS" if rep.passed else "FAIL"
    _RESULTS[number] = (title, verdict)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, verdict = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {verdict:<6} {title}")
