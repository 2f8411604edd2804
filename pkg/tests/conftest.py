import numpy as np
import pytest

from paneldyn.panel_store import PanelDataset


def make_dataset(prices, turnover=None, eps=None, spx=None, ust=None, gdp=None, **extra):
    prices = np.atleast_2d(np.asarray(prices, dtype=float))
    n, t = prices.shape
    ones = np.ones(t)
    return PanelDataset(
        firms=tuple(f"F{i}" for i in range(n)),
        dates=tuple(f"2010-01-{d + 1:02d}" if t <= 31 else f"D{d:05d}" for d in range(t)),
        adj_close=prices,
        turnover=np.full((n, t), 100.0) if turnover is None else turnover,
        eps_fy1=np.full((n, t), 5.0) if eps is None else eps,
        spx=1000.0 * ones if spx is None else spx,
        ust10y=4.0 * ones if ust is None else ust,
        gdp_fy1=2.5 * ones if gdp is None else gdp,
        **extra,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """Record ``(number, ok, detail)`` outcomes for the acceptance summary."""
    results = request.config.stash[ACCEPTANCE]

    def record(number, ok, detail):
        results.setdefault(number, []).append((bool(ok), detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        parts = results[number]
        ok = all(p[0] for p in parts)
        detail = "; ".join(p[1] for p in parts)
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'} - {detail}")
