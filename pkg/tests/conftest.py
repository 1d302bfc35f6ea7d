import numpy as np
import pytest
import scipy.sparse as sp

from tvga import nn
from tvga.graph import Graph


def numeric_grad(f, x, h=1e-4):
    """Central differences of the scalar function f at array x."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        up = f(x)
        x[idx] = old - h
        down = f(x)
        x[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)), np.max(np.abs(b))))


def autograd(build, x):
    """Gradient of sum(build(t)) with respect to t, with t wrapping x."""
    t = nn.Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    with nn.Tape() as tape:
        loss = nn.sum(build(t))
    nn.backward(tape, loss)
    return t.grad


def check_grad(build, x, tol=1e-4):
    analytic = autograd(build, x)
    numeric = numeric_grad(lambda v: float(np.sum(nn.value_of(build(v)))), x)
    assert rel_err(analytic, numeric) < tol


def random_graph(n, p, rng, connected=True):
    while True:
        up = np.triu(rng.random((n, n)) < p, 1)
        edges = np.argwhere(up)
        g = Graph.from_edges(n, edges, largest_component=False)
        if not connected or g.is_connected():
            return g


def sbm_graph(n=90, k=3, p_in=0.15, p_out=0.01, f=30, seed=0):
    rng = np.random.default_rng(seed)
    lab = rng.integers(k, size=n)
    prob = np.where(lab[:, None] == lab[None, :], p_in, p_out)
    edges = np.argwhere(np.triu(rng.random((n, n)) < prob, 1))
    x = (rng.random((n, f)) < 0.05) | ((np.arange(f) % k == lab[:, None]) & (rng.random((n, f)) < 0.4))
    return Graph.from_edges(n, edges, features=sp.csr_matrix(x.astype(float)), labels=lab)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def toy_graph():
    return sbm_graph()
