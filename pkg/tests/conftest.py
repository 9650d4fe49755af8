"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""
import pytest

_OUTCOMES: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.fixture
def report(request):
    """Attach a detail string to the running criterion test."""
    marker = request.node.get_closest_marker("criterion")
    entry = _OUTCOMES.setdefault(marker.args[0], {"title": marker.args[1], "ok": True, "details": []})

    def note(text: str):
        entry["details"].append(text)
        print(f"[criterion {marker.args[0]}] {text}")

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call" and not rep.failed:
        return
    entry = _OUTCOMES.setdefault(marker.args[0], {"title": marker.args[1], "ok": True, "details": []})
    if rep.failed or rep.skipped:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        entry = _OUTCOMES[number]
        status = "PASS" if entry["ok"] else "FAIL"
        detail = "; ".join(entry["details"])
        terminalreporter.write_line(f"criterion {number} [{status}] {entry['title']}"
                                    + (f" :: {detail}" if detail else ""))
