"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

import contextlib
import time

LINES: list[str] = []


@contextlib.contextmanager
def criterion(number, title, budget=None):
    """Time the block; record PASS, or FAIL with the reason, then re-raise."""
    t0 = time.perf_counter()
    detail = {}
    try:
        yield detail
        elapsed = time.perf_counter() - t0
        if budget is not None:
            assert elapsed < budget, f"took {elapsed:.1f}s, budget {budget}s"
    except BaseException as exc:
        line = f"FAIL  {number:>2}. {title}: {str(exc).splitlines()[0] if str(exc) else type(exc).__name__}"
        LINES.append(line)
        print(line)
        raise
    extra = "".join(f", {k}={v}" for k, v in detail.items())
    line = f"PASS  {number:>2}. {title} ({elapsed:.2f}s{extra})"
    LINES.append(line)
    print(line)
