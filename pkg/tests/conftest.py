import numpy as np
import pytest


def numeric_grad(f, arr, eps=1e-6, limit=None, rng=None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``arr`` (mutated in place)."""
    idxs = list(np.ndindex(arr.shape))
    if limit is not None and len(idxs) > limit:
        pick = (rng or np.random.default_rng(0)).choice(len(idxs), limit, replace=False)
        idxs = [idxs[i] for i in pick]
    out = {}
    for idx in idxs:
        old = arr[idx]
        arr[idx] = old + eps
        up = f()
        arr[idx] = old - eps
        down = f()
        arr[idx] = old
        out[idx] = (up - down) / (2 * eps)
    return out


def max_rel_error(numeric: dict, analytic, floor=1e-7):
    """Worst relative error, skipping entries where both sides are ~0."""
    worst = 0.0
    for idx, num in numeric.items():
        ana = float(analytic[idx])
        scale = max(abs(num), abs(ana))
        if scale > floor:
            worst = max(worst, abs(num - ana) / scale)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    from hdsr.corpus import procedural_glyphs
    return procedural_glyphs(3, 12, writers=15)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """``acceptance(n, ok, detail)`` records one criterion line for the summary."""
    store = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(n, ok, detail):
        store[n] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(store):
        ok, detail = store[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
