"""Terminal summary: one PASS/FAIL line per numbered acceptance check."""

from __future__ import annotations

import re

_CRITERION = re.compile(r"test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results: dict[int, str] = {}
    for reports in terminalreporter.stats.values():
        for rep in reports:
            nodeid = getattr(rep, "nodeid", "")
            match = _CRITERION.search(nodeid)
            if match is None:
                continue
            n = int(match.group(1))
            if getattr(rep, "failed", False):
                results[n] = "FAIL"
            elif getattr(rep, "skipped", False):
                results.setdefault(n, "SKIP")
            elif getattr(rep, "when", "") == "call" and rep.passed:
                results.setdefault(n, "PASS")
    if results:
        terminalreporter.write_sep("-", "acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(f"criterion {n:02d}: {results[n]}")
