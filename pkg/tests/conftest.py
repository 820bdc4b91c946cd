import pytest

from qpurify.chain import RngStream


class ForcedRng(RngStream):
    """Every Bernoulli draw succeeds and every geometric wait is one step."""

    def __init__(self):
        super().__init__(0)
        self.random = lambda: 0.0


@pytest.fixture
def forced():
    return ForcedRng()


ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash[ACCEPTANCE]

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}"
        lines[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
