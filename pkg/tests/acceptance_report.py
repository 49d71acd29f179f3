"""Collects one line per acceptance criterion for the terminal summary."""

import contextlib
import time

LINES = []


@contextlib.contextmanager
def criterion(number: int, title: str, gating: bool = True):
    """Record PASS/FAIL for the enclosed checks; the body may append to ``detail``."""
    detail = []
    t0 = time.perf_counter()
    try:
        yield detail
    except BaseException:
        _record(number, title, "FAIL" if gating else "INFO-FAIL", detail, t0)
        raise
    _record(number, title, "PASS" if gating else "INFO", detail, t0)


def _record(number, title, status, detail, t0):
    extra = "; ".join(detail)
    line = f"criterion {number}: {status:<9} {title} [{time.perf_counter() - t0:.2f}s]"
    if extra:
        line += f" -- {extra}"
    LINES.append(line)
    print(line)
