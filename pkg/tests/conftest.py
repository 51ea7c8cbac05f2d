"""One pass/fail line per acceptance criterion at the end of the run."""

from collections import defaultdict

N_CRITERIA = 12
_outcomes = defaultdict(list)      # criterion -> [(nodeid, passed)]


def pytest_runtest_makereport(item, call):
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        _outcomes[int(m.args[0])].append((item.nodeid, call.excinfo is None))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in range(1, N_CRITERIA + 1):
        res = _outcomes.get(k)
        if not res:
            tr.write_line(f"criterion {k:2d}: NOT RUN")
            continue
        ok = sum(p for _, p in res)
        verdict = "PASS" if ok == len(res) else "FAIL"
        tr.write_line(f"criterion {k:2d}: {verdict} ({ok}/{len(res)} checks)")
        for nodeid, p in res:
            if not p:
                tr.write_line(f"    failed: {nodeid.split('::', 1)[-1]}")
