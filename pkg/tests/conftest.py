import pytest

_VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record one acceptance line; the lines are printed after the run."""

    def record(criterion: str, ok: bool | None, detail: str = "") -> bool:
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
        _VERDICTS.append(f"{status} criterion {criterion}" + (f": {detail}" if detail else ""))
        print(_VERDICTS[-1])
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
