import pytest

_RESULTS_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS_KEY] = {}


@pytest.fixture
def acceptance(request):
    """Record one acceptance criterion: ``acceptance(number, title, passed, detail)``."""
    results = request.config.stash[_RESULTS_KEY]

    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        results[number] = (title, bool(passed), detail)
        print(f"\n[criterion {number}] {'PASS' if passed else 'FAIL'} {title}: {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, passed, detail = results[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {number}. {title}: {detail}")
