"""Shared oracles for the test suite."""
from types import SimpleNamespace

import numpy as np

from specbench.graph import Graph, generate_graph
from specbench.models import GNN, ModelConfig, Propagation, init_params, loss
from specbench.tasks import make_splits

from conftest import random_connected_graph


def toy_task(n, f, out_dim, loss_kind, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, f))
    masks = make_splits(n, (0.5, 0.25, 0.25), seed)
    if loss_kind == "ce":
        y = rng.integers(0, out_dim, size=n)
    else:
        y = rng.normal(size=(n, out_dim))
    return SimpleNamespace(features=x, masks=masks, loss_kind=loss_kind, y=y, out_dim=out_dim)


def max_gradient_error(kind, loss_kind, seed=0, n=12, f=5, hidden=8, layers=2, step=1e-5):
    """Largest |analytic - central difference| / max(|a|, |fd|, 1e-6) over all parameters."""
    rng = np.random.default_rng(seed)
    g = random_connected_graph(n, 0.3, rng)
    out_dim = 3
    task = toy_task(n, f, out_dim, loss_kind, seed)
    cfg = ModelConfig(kind, f, out_dim, layers=layers, hidden=hidden)
    prop = Propagation(g)
    model = GNN(cfg, prop, task.features)
    params = init_params(cfg, "he", seed)
    # move GIN's eps and every bias off zero so all paths are exercised
    params = {k: v + 0.1 * rng.normal(size=v.shape) for k, v in params.items()}
    out, cache = model.forward(params)
    _, dout = loss(out, task)
    grads = model.backward(params, cache, dout)

    def f_loss(p):
        return loss(model.forward(p)[0], task)[0]

    worst = 0.0
    for name, p in params.items():
        for idx in np.ndindex(p.shape):
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[name][idx] += step
            minus[name][idx] -= step
            fd = (f_loss(plus) - f_loss(minus)) / (2 * step)
            a = grads[name][idx]
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-6))
    return worst
