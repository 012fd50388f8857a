"""One pass/fail line per acceptance criterion at the end of the run."""

_LINES: list[tuple[str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria (slow)")


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _LINES.append((props["criterion"], outcome, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in sorted(_LINES, key=lambda t: int(t[0].split()[0])):
        terminalreporter.write_line(f"[{outcome}] {name}" + (f": {detail}" if detail else ""))
