import numpy as np
import pytest

from qsynth.preprocess import ULB_COLUMNS


def write_ulb_like(path, n_neg=500, n_pos=80, seed=0):
    """Small table with the credit-card header; fraud rows are shifted in a handful of columns."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n_neg + n_pos, 30))
    x[n_neg:, 1:8] += rng.normal(1.5, 0.4, size=7)
    x[n_neg:, 1:8] += 0.6 * rng.normal(size=(n_pos, 1))
    x[:, 0] = np.arange(n_neg + n_pos)
    y = np.r_[np.zeros(n_neg), np.ones(n_pos)].astype(int)
    with open(path, "w") as fh:
        fh.write(",".join(f'"{c}"' for c in ULB_COLUMNS) + "\n")
        for row, label in zip(x, y):
            fh.write(",".join(f"{v:.6f}" for v in row) + f',"{label}"\n')
    return path


@pytest.fixture(scope="session")
def ulb_csv(tmp_path_factory):
    return write_ulb_like(tmp_path_factory.mktemp("data") / "creditcard.csv")


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def verdict(request):
    """Record one pass/fail line for the terminal summary, then assert it."""
    def record(label, ok, detail):
        request.config.acceptance_lines.append(f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
        assert ok, f"{label}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
