import numpy as np
import pytest
from hypothesis import settings

from stockode.hhcn import build_hypergraph
from stockode.market import prepare_dataset, synth_market

settings.register_profile("stockode", max_examples=40, deadline=None)
settings.load_profile("stockode")


def central_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Entry-wise central differences of scalar ``f`` at ``x`` (test-side oracle)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g


@pytest.fixture(scope="session")
def small_market():
    """Four stocks, two hyperedges: the gradient-check sized market."""
    m = synth_market(4, 80, 2, 1.0, 0)
    ds = prepare_dataset(m.bars, m.universe.tickers, 5, (0.6, 0.2, 0.2))
    return m, ds, build_hypergraph(m.relations, m.universe)


@pytest.fixture(scope="session")
def medium_market():
    m = synth_market(8, 90, 3, 1.0, 3)
    ds = prepare_dataset(m.bars, m.universe.tickers, 4, (0.6, 0.2, 0.2))
    return m, ds, build_hypergraph(m.relations, m.universe)


_ACCEPTANCE_LINES = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(name: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
