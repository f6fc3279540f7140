import contextlib
import time

import pytest

_RESULTS: list[str] = []


class CriterionRecorder:
    @contextlib.contextmanager
    def __call__(self, number: int, title: str, budget_s: float | None = None):
        start = time.perf_counter()
        try:
            yield
        except BaseException as exc:
            _RESULTS.append(f"criterion {number} FAIL  {title}  ({type(exc).__name__}: {str(exc).splitlines()[0][:120] if str(exc) else ''})")
            raise
        elapsed = time.perf_counter() - start
        if budget_s is not None and elapsed >= budget_s:
            _RESULTS.append(f"criterion {number} FAIL  {title}  (took {elapsed:.1f}s, budget {budget_s:.0f}s)")
            raise AssertionError(f"criterion {number} took {elapsed:.1f}s, budget {budget_s}s")
        _RESULTS.append(f"criterion {number} PASS  {title}  ({elapsed:.1f}s)")


@pytest.fixture
def criterion():
    return CriterionRecorder()


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
