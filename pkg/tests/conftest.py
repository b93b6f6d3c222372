from __future__ import annotations

import sys
from functools import lru_cache
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gsagg.coeffs import build_validated  # noqa: E402
from gsagg.params import SchemeParams  # noqa: E402


@lru_cache(maxsize=None)
def validated(K: int, U: int, S: int, q: int = 2147483647, L: int | None = None, seed: int = 0, attempts: int = 10):
    params = SchemeParams(K, U, S, q, L)
    family, ums = build_validated(params, seed=seed, max_attempts=attempts)
    return params, family, ums


@pytest.fixture
def scheme523():
    return validated(5, 2, 3)


@pytest.fixture
def scheme422():
    return validated(4, 2, 2)


@pytest.fixture
def tiny_scheme():
    # q = 2 needs many draws before every rank condition holds
    return validated(3, 2, 2, q=2, L=4, attempts=1000)


# acceptance report ------------------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; call as ``criterion(n, title, ok, detail)``."""

    def record(n: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
