import numpy as np
import pytest
from threadpoolctl import threadpool_limits

# single-threaded BLAS keeps float summation order (and so every logged number) fixed
threadpool_limits(1)


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Elementwise central differences of scalar ``f`` at ``x`` (x is modified in place, then restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        up = f()
        x[i] = orig - h
        down = f()
        x[i] = orig
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), floor))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria outcomes, printed one per line at the end of the run
CRITERIA: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """``criterion(name, ok, detail)`` records the outcome, then asserts it."""

    def record(name: str, ok: bool, detail: str = "") -> None:
        CRITERIA[name] = (bool(ok), detail)
        assert ok, f"{name}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in sorted(CRITERIA.items()):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
