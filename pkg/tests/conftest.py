import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

ACCEPTANCE = []


def record(number, title, ok, detail=""):
    ACCEPTANCE.append((number, title, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}")
