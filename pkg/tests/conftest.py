"""Acceptance reporting: one pass/fail line per criterion at the end of the run."""

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    entry = _results.setdefault(num, {"title": title, "outcome": "pass", "notes": []})
    if call.when == "call" or call.excinfo is not None:
        if call.excinfo is not None:
            import pytest

            if call.excinfo.errisinstance(pytest.skip.Exception):
                if entry["outcome"] == "pass":
                    entry["outcome"] = "skip"
            else:
                entry["outcome"] = "FAIL"
        notes = [v for k, v in item.user_properties if k == "measured"]
        for n in notes:
            if n not in entry["notes"]:
                entry["notes"].append(n)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_results):
        r = _results[num]
        line = f"criterion {num:>2} {r['outcome'].upper():<4} {r['title']}"
        if r["notes"]:
            line += "  [" + "; ".join(r["notes"]) + "]"
        terminalreporter.write_line(line)
