import numpy as np
import pytest


def random_boxes(rng, n, min_side=0.01):
    """Sanitized unit boxes with sides of at least ``min_side``."""
    lo = rng.uniform(0, 1 - min_side, size=(n, 2))
    side = min_side + rng.uniform(0, 1, size=(n, 2)) * (1 - min_side - lo)
    return np.concatenate([lo, lo + side], axis=1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


class _Criterion:
    def __init__(self, lines, number, title):
        self.lines, self.number, self.title = lines, number, title
        self.details = []

    def note(self, text):
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        details = list(self.details)
        if exc is not None:
            details.append(f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        line = f"criterion {self.number} [{self.title}]: {status}"
        if details:
            line += " - " + "; ".join(details)
        self.lines.append((self.number, line))
        print(line)
        return False


@pytest.fixture
def criterion(request):
    """``with criterion(n, title) as c: ...`` records one pass/fail line for the summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])
    return lambda number, title: _Criterion(lines, number, title)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines, key=lambda x: x[0]):
        terminalreporter.write_line(line)
