import numpy as np
import pytest

from fronthaul_sim import McConfig, SystemConfig


@pytest.fixture
def siso():
    """Single-antenna link at 20 dB with ten-symbol blocks."""
    return SystemConfig(nt_per_ms=(1,), nr_per_bs=(1,), coherence_len=10, train_len=1, power=100.0, backhaul=6.0)


@pytest.fixture
def mimo2():
    return SystemConfig(nt_per_ms=(2,), nr_per_bs=(2,), coherence_len=10, train_len=2, power=100.0, backhaul=6.0)


@pytest.fixture
def two_bs():
    return SystemConfig(nt_per_ms=(1, 1), nr_per_bs=(1, 1), coherence_len=10, train_len=2, power=10.0, backhaul=3.0)


@pytest.fixture
def small_mc():
    return McConfig(4000, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS: list[tuple[int, str, bool, str]] = []


@pytest.fixture
def verdict():
    """Record one acceptance line, then fail the test if the check did not hold."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> None:
        _VERDICTS.append((number, title, bool(ok), detail))
        print(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}  {detail}")
        assert ok, f"criterion {number} ({title}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_VERDICTS):
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}  {detail}")
