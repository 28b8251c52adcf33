import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_F(rng, n=None, spread=0.3, det_range=(0.5, 2.0)):
    """Random deformation gradients near identity with det in ``det_range``."""
    out = []
    while len(out) < (n or 1):
        F = np.eye(2) + rng.uniform(-spread, spread, (2, 2))
        if det_range[0] <= np.linalg.det(F) <= det_range[1]:
            out.append(F)
    return out[0] if n is None else np.array(out)


def rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


ACCEPTANCE_LINES = []


@pytest.fixture
def report(capsys):
    """Print a ``criterion N: PASS/FAIL`` line and keep it for the summary."""

    def emit(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
