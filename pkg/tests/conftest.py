from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"
TOY = DATA / "toy"
SOURCE = "(s / source :ARG0 (j / joy) :ARG1 (e / eat-01))"


@pytest.fixture
def toy_dir():
    return TOY


@pytest.fixture
def source_text():
    return SOURCE


_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
