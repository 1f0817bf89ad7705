from __future__ import annotations

import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

# one line per acceptance criterion, printed at the end of the run
CRITERIA: dict[int, str] = {}


def record(number: int, ok: bool, detail: str):
    CRITERIA[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[k])
