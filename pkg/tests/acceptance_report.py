"""One PASS/FAIL/SKIP line per acceptance criterion, printed at the end of the run."""

from __future__ import annotations

import time
from contextlib import contextmanager

import pytest

RESULTS: dict[int, str] = {}


@contextmanager
def criterion(number: int, title: str):
    """Record the outcome of the enclosed block; ``detail`` entries are appended to the line."""
    detail: dict = {}
    start = time.perf_counter()
    try:
        yield detail
    except pytest.skip.Exception as exc:
        RESULTS[number] = f"SKIP  [{number}] {title} ({exc.msg})"
        raise
    except BaseException as exc:
        RESULTS[number] = f"FAIL  [{number}] {title}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        raise
    extra = " ".join(f"{k}={v}" for k, v in detail.items())
    RESULTS[number] = f"PASS  [{number}] {title} ({time.perf_counter() - start:.2f}s{', ' + extra if extra else ''})"
    print(RESULTS[number])


def summary_lines() -> list[str]:
    return [RESULTS[k] for k in sorted(RESULTS)]
