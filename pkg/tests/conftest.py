import contextlib
import time

ACCEPTANCE: dict[int, tuple[str, bool, float, str]] = {}


@contextlib.contextmanager
def criterion(number: int, title: str, budget: float | None = None):
    """Time a block, record its outcome for the summary, re-raise failures."""
    t0 = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - t0
        if budget is not None:
            assert elapsed < budget, f"runtime {elapsed:.2f}s exceeds {budget}s"
    except BaseException as exc:
        ACCEPTANCE[number] = (title, False, time.perf_counter() - t0, str(exc).splitlines()[0] if str(exc) else type(exc).__name__)
        raise
    ACCEPTANCE[number] = (title, True, elapsed, "")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, secs, why = ACCEPTANCE[n]
        line = f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title} ({secs:.2f}s)"
        terminalreporter.write_line(line + (f" -- {why}" if why else ""))
