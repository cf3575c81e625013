import pytest

_VERDICTS = []


@pytest.fixture
def verdict(capsys):
    """Record one PASS/FAIL line for an acceptance criterion and return the flag."""

    def record(number, ok, detail, lines=()):
        text = "\n".join([f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {detail}", *lines])
        _VERDICTS.append((number, text))
        with capsys.disabled():
            print("\n" + text)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, text in sorted(_VERDICTS):
            for line in text.splitlines():
                terminalreporter.write_line(line)
