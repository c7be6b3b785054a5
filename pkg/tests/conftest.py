import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter):
    rows = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = _CRITERION.search(getattr(rep, "nodeid", ""))
            if m and getattr(rep, "when", "call") in ("call", "setup"):
                key = int(m.group(1))
                status = "PASS" if outcome == "passed" else "FAIL"
                if rows.get(key, (None, "PASS"))[1] != "FAIL":
                    rows[key] = (m.group(2), status)
    if rows:
        terminalreporter.section("acceptance criteria")
        for key in sorted(rows):
            name, status = rows[key]
            terminalreporter.write_line(f"criterion {key:2d} ({name.replace('_', ' ')}): {status}")
