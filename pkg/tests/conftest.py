import numpy as np
import pytest

from holofocus.tensor import Tensor


def fd_check(fn, arrays, seed=0, h=1e-5):
    """Max relative error between backward() and central differences.

    ``fn`` maps leaf Tensors to a Tensor; the scalar probed is <fn(...), w>
    with a fixed random weight w so every output element matters.
    """
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    w = np.random.default_rng(seed).standard_normal(out.shape)
    out.backward(w)
    worst = 0.0
    for leaf in leaves:
        num = np.zeros_like(leaf.data)
        flat = leaf.data.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            fp = float(np.sum(fn(*[Tensor(l.data) for l in leaves]).data * w))
            flat[k] = old - h
            fm = float(np.sum(fn(*[Tensor(l.data) for l in leaves]).data * w))
            flat[k] = old
            num.reshape(-1)[k] = (fp - fm) / (2 * h)
        ana = leaf.grad if leaf.grad is not None else np.zeros_like(num)
        scale = max(np.abs(num).max(), np.abs(ana).max(), 1e-8)
        worst = max(worst, float(np.abs(ana - num).max() / scale))
    return worst


def fd_check_params(loss_fn, params, n_probe=None, seed=0, h=1e-5):
    """Same check for a dict of model parameters, probing a random subset of entries."""
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size) if n_probe is None or flat.size <= n_probe else \
            rng.choice(flat.size, n_probe, replace=False)
        ana = p.grad.reshape(-1)[idx]
        num = np.empty(len(idx))
        for j, k in enumerate(idx):
            old = flat[k]
            flat[k] = old + h
            fp = loss_fn().item()
            flat[k] = old - h
            fm = loss_fn().item()
            flat[k] = old
            num[j] = (fp - fm) / (2 * h)
        scale = max(np.abs(num).max(), np.abs(ana).max(), 1e-7)
        worst = max(worst, float(np.abs(ana - num).max() / scale))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance lines, echoed in the terminal summary so they show without -s
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
