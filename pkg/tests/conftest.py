from __future__ import annotations

ACCEPTANCE: dict[int, str] = {}


def record(number: int, name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {name}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
