import numpy as np
import pytest

from quantmpc.ring import RingArray
from quantmpc.sharing import AdditiveShare


def additive_for(ctx, values, width: int, seed: int = 0):
    """Test-only dealer: split ``values`` between P1 and P2 with a fixed-seed mask (P0 gets None)."""
    values = np.asarray(values, dtype=np.int64)
    mask = np.random.default_rng([seed, 77]).integers(0, 1 << width, size=values.shape, dtype=np.int64)
    if ctx.id == 0:
        return None
    if ctx.id == 1:
        return AdditiveShare(RingArray.wrap(mask, width), 1)
    return AdditiveShare(RingArray.wrap(values - mask, width), 2)


def opened_to_p1(ctx, share, shape, width):
    from quantmpc.layers import reveal_to_p1

    return reveal_to_p1(ctx, share, shape, width)


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; returns ``record(name, ok, detail)`` which also returns ``ok``."""
    def record(name: str, ok: bool, detail: str = "") -> bool:
        _ACCEPTANCE.append(f"{'PASS' if ok else 'FAIL'} {name}" + (f" ({detail})" if detail else ""))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
