import pytest

_CRITERIA: dict[str, tuple[str, str]] = {}
_NOTES: dict[str, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the terminal summary")


@pytest.fixture
def note(request):
    """Attach a measured value to the current criterion's summary line."""
    marker = request.node.get_closest_marker("criterion")
    bucket = _NOTES.setdefault(marker.args[0] if marker else request.node.name, [])
    return bucket.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _CRITERIA[name] = ("PASS" if rep.passed else "FAIL", item.nodeid)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, _) in _CRITERIA.items():
        detail = "; ".join(_NOTES.get(name, []))
        terminalreporter.write_line(f"{status}  {name}" + (f"  [{detail}]" if detail else ""))
