import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")
_results: dict[int, tuple[str, str, float]] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    num, title = int(m.group(1)), m.group(2).replace("_", " ")
    prev = _results.get(num, (title, "PASS", 0.0))
    if report.when == "call":
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _results[num] = (title, status if prev[1] == "PASS" else prev[1], report.duration)
    elif report.failed:
        _results[num] = (title, "FAIL", prev[2])


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_results):
        title, status, secs = _results[num]
        terminalreporter.write_line(f"criterion {num:2d}: {status}  {title} ({secs:.2f} s)")
