"""Shared builders and independent oracles used across the test modules."""

import numpy as np
import pytest

from mlpfusion.linalg import make_rng
from mlpfusion.mlp import MlpWeights, ScalarHead


def random_mlp(rng, p=4, p_I=6, act="gelu_exact", bias=True, scale=1.0):
    W1 = rng.standard_normal((p, p_I)) * scale
    W2 = rng.standard_normal((p_I, p)) * scale
    b1 = rng.standard_normal(p_I) if bias else np.zeros(p_I)
    b2 = rng.standard_normal(p) if bias else np.zeros(p)
    return MlpWeights(W1, b1, W2, b2, act)


def random_head(rng, p):
    return ScalarHead(rng.standard_normal(p))


def fd_gradients(model, X, G, h=1e-5):
    """Central differences of ``sum(G * model.forward(X))`` w.r.t. ``model.trainable()``."""
    params = {k: np.array(v, dtype=float) for k, v in model.trainable().items()}
    out = {}
    for name, value in params.items():
        grad = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            vals = []
            for sign in (1.0, -1.0):
                bumped = dict(params)
                arr = value.copy()
                arr[idx] += sign * h
                bumped[name] = arr
                vals.append(np.sum(G * model.with_trainable(bumped).forward(X)))
            grad[idx] = (vals[0] - vals[1]) / (2 * h)
        out[name] = grad
    return out


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def flat_kernel(gx, gz, kind):
    """Kernel from fully flattened gradient vectors (no per-group split)."""
    a = gx.flatten()
    b = gz.flatten()
    return float(a @ (np.sign(b) if kind == "adam" else b))


@pytest.fixture
def rng():
    return make_rng(12345)


# acceptance results, printed as one line per criterion at the end of the run
ACCEPTANCE = {}


def record(number, ok, detail):
    ACCEPTANCE[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
