import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_LINES = []


class Criterion:
    """Collects the checks of one acceptance criterion and prints a verdict line."""

    def __init__(self, number, title, budget):
        self.number, self.title, self.budget = number, title, budget
        self.checks = []
        self.start = time.perf_counter()

    def check(self, name, ok, detail=""):
        self.checks.append((name, bool(ok), detail))
        return bool(ok)

    def finish(self):
        elapsed = time.perf_counter() - self.start
        if self.budget is not None:
            self.check("runtime", elapsed < self.budget, f"{elapsed:.1f}s < {self.budget:g}s")
        failed = [c for c in self.checks if not c[1]]
        verdict = "PASS" if not failed else "FAIL"
        body = "; ".join(f"{n}={'ok' if ok else 'FAIL'}" + (f" ({d})" if d else "") for n, ok, d in self.checks)
        line = f"[acceptance {self.number:2d}] {verdict} {self.title}: {body}"
        _LINES.append((self.number, line))
        print(line)
        return failed


@pytest.fixture
def criterion():
    made = []

    def make(number, title, budget=None):
        c = Criterion(number, title, budget)
        made.append(c)
        return c

    yield make
    # verdicts are asserted inside the tests; finishing twice is harmless
    for c in made:
        if not any(n == c.number for n, _ in _LINES):
            c.finish()


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)
