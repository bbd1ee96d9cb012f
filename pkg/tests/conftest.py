import os

import pytest
from hypothesis import settings

settings.register_profile("ci", deadline=None, derandomize=True)
settings.register_profile("dev", deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


def pytest_addoption(parser):
    parser.addoption("--long", action="store_true", default=False,
                     help="run the multi-hour CiteULike training checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--long"):
        return
    skip = pytest.mark.skip(reason="long run; enable with --long")
    for item in items:
        if "long" in item.keywords:
            item.add_marker(skip)


_planted: dict = {}


@pytest.fixture(scope="session")
def planted_runs():
    """Lazily trained planted-structure runs, shared across modules."""
    from lcmr.synthetic import planted_run

    def get(variant="full"):
        if variant not in _planted:
            _planted[variant] = planted_run(variant)
        return _planted[variant]
    return get


# -- acceptance reporting ---------------------------------------------------
# Tests marked ``criterion(n, title)`` get one summary line each at the end of
# the run. Details come from ``record_property("detail", ...)``.

_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    if rep.when == "setup" and rep.skipped:
        _criteria[num] = ("SKIP", title, str(rep.longrepr[2]) if isinstance(rep.longrepr, tuple) else "")
    elif rep.when == "setup" and rep.failed:
        msg = str(call.excinfo.value).splitlines()[0] if call.excinfo else ""
        _criteria[num] = ("FAIL", title, f"setup error: {msg}")
    elif rep.when == "call":
        if rep.failed:
            msg = str(call.excinfo.value).splitlines()[0] if call.excinfo else ""
            detail = f"{detail}; {msg}" if detail else msg
        _criteria[num] = ("PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        status, title, detail = _criteria[num]
        line = f"criterion {num} [{status}] {title}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)
