import numpy as np
import pytest
from hypothesis import settings

from im2markup import autodiff as ad

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def numeric_grad(f, arrays, h=1e-6):
    """Central differences of scalar ``f(*arrays)`` w.r.t. every array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            up = f(*arrays)
            a[idx] = old - h
            down = f(*arrays)
            a[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def check_op_gradient(build, arrays, tol=1e-6, h=1e-6, seed=0):
    """FD-check ``build(*tensors) -> Tensor`` via a random projection to a scalar."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    with ad.no_grad():
        out_shape = build(*[ad.Tensor(a) for a in arrays]).shape
    proj = np.random.default_rng(seed).normal(size=out_shape)

    def scalar(*arrs):
        with ad.no_grad():
            return float(np.sum(build(*[ad.Tensor(a) for a in arrs]).data * proj))

    leaves = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    with ad.Tape() as tape:
        root = ad.sum_(build(*leaves) * proj)
    tape.backward(root)
    numeric = numeric_grad(scalar, arrays, h)
    for leaf, num in zip(leaves, numeric):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(num)
        scale = max(np.abs(num).max(), np.abs(analytic).max(), 1e-12)
        assert np.abs(analytic - num).max() / scale < tol


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
