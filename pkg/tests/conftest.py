"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    name = mark.args[0]
    detail = dict(item.user_properties).get("measured", "")
    if rep.when == "setup" and rep.skipped:
        _RESULTS[name] = ("SKIP", str(rep.longrepr[-1]) if isinstance(rep.longrepr, tuple) else "")
    elif rep.when == "call":
        if rep.skipped:
            _RESULTS[name] = ("SKIP", str(rep.longrepr[-1]) if isinstance(rep.longrepr, tuple) else "")
        else:
            _RESULTS[name] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, detail) in _RESULTS.items():
        line = f"{status:<4} {name}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
