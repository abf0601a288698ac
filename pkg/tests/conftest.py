"""Shared pytest plumbing: the acceptance recorder and its summary block."""

import pytest

_ACCEPTANCE = {}


class AcceptanceRecorder:
    def record(self, number: int, title: str, passed: bool, detail: str):
        _ACCEPTANCE[number] = (title, bool(passed), detail)
        print(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {title} | {detail}")
        return passed


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, passed, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {n:2d}. {title}: {detail}")
    n_pass = sum(p for _, p, _ in _ACCEPTANCE.values())
    terminalreporter.write_line(f"{n_pass}/{len(_ACCEPTANCE)} acceptance criteria passed")
