import pytest

_VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_VERDICTS] = {}


@pytest.fixture
def criterion(request):
    """Record an acceptance verdict, print it, then assert it."""
    store = request.config.stash[_VERDICTS]

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} | {detail}"
        store[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_VERDICTS, {})
    if store:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(store):
            terminalreporter.write_line(store[k])
