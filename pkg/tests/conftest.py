import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dyadic_cz import build_haar, build_uniform

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def bin3():
    return build_uniform(3, 2)


@pytest.fixture
def bin3_haar(bin3):
    return bin3, build_haar(bin3, "classical-binary")


def dense_haar(system):
    """Leaves x functions matrix built one function at a time."""
    cols = [system.function_on_leaves(k) for k in range(system.n_functions)]
    return np.column_stack(cols) if cols else np.zeros((system.tree.n_leaves, 0))


def brute_lca(tree, x, y):
    """Smallest common cube by walking parents."""
    def chain(leaf):
        q = int(tree.leaf_cube[leaf])
        out = [q]
        while tree.parent[q] >= 0:
            q = int(tree.parent[q])
            out.append(q)
        return out
    cy = set(chain(y))
    return next(q for q in chain(x) if q in cy)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""
    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
