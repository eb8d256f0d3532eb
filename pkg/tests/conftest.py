import time

import pytest

_LINES: list[str] = []


class _Criterion:
    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.started = time.perf_counter()

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.started

    def report(self, ok: bool, detail: str, limit_s: float | None = None) -> bool:
        secs = self.elapsed
        within = limit_s is None or secs < limit_s
        ok = bool(ok and within)
        budget = "" if limit_s is None else f" / limit {limit_s:.0f}s"
        line = (f"CRITERION {self.number} [{'PASS' if ok else 'FAIL'}] {self.title}: {detail} "
                f"(runtime {secs:.1f}s{budget})")
        _LINES.append(line)
        print(line, flush=True)
        return ok


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
