"""Dense GNNs with hand-written backward passes, Adam and the training loop.

Every model maps node features ``X`` (n x F) to outputs (n x out_dim).
Hidden layers use ReLU and the last layer is linear. Parameters live in a
plain ``dict[str, np.ndarray]`` so optimizers and checkpoints stay generic.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .graph import Graph, degree_vector, normalized_adjacency_with_self_loops, normalized_laplacian

Params = Dict[str, np.ndarray]

MODEL_KINDS = ("mlp", "gcn", "sgc", "sage", "gin", "cheb")
INIT_SCHEMES = ("default_uniform", "he")
SCHEDULERS = ("none", "cosine_restarts")
CHECKPOINT_VERSION = 1


class TrainingDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    in_dim: int
    out_dim: int
    layers: int = 2
    hidden: int = 64
    cheb_order: int = 2

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if min(self.in_dim, self.out_dim, self.layers, self.hidden) < 1:
            raise ValueError("model dimensions and layer count must be positive")
        if self.kind == "cheb" and self.cheb_order < 1:
            raise ValueError("cheb_order must be >= 1")

    def dims(self) -> list[int]:
        return [self.in_dim] + [self.hidden] * (self.layers - 1) + [self.out_dim]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout: float = 0.0
    scheduler: str = "none"
    t0: int = 10
    init: str = "default_uniform"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.init not in INIT_SCHEMES:
            raise ValueError(f"unknown init scheme {self.init!r}")
        if self.dropout != 0.0:
            raise ValueError("only dropout 0 is supported")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


MAIN_TRAIN = TrainConfig()
PRELIM_TRAIN = TrainConfig(
    epochs=2000, learning_rate=2e-4, scheduler="cosine_restarts", t0=10, init="he"
)
MAIN_LAYERS = 2
PRELIM_LAYERS = 3


class Propagation:
    """Dense propagation operators of one graph, built on first use."""

    def __init__(self, g: Graph):
        self.graph = g

    @cached_property
    def a_hat(self) -> np.ndarray:
        return normalized_adjacency_with_self_loops(self.graph)

    @cached_property
    def adj(self) -> np.ndarray:
        return self.graph.adjacency()

    @cached_property
    def mean_adj(self) -> np.ndarray:
        d = degree_vector(self.graph).astype(np.float64)
        inv = np.divide(1.0, d, out=np.zeros_like(d), where=d > 0)
        return inv[:, None] * self.adj

    @cached_property
    def mean_adj_t(self) -> np.ndarray:
        return np.ascontiguousarray(self.mean_adj.T)

    @cached_property
    def lap_shift(self) -> np.ndarray:
        # L - I maps the spectrum [0, 2] onto [-1, 1]
        return normalized_laplacian(self.graph) - np.eye(self.graph.n)


# --- initialization --------------------------------------------------------

def param_shapes(config: ModelConfig) -> list[tuple[str, tuple, int]]:
    """(name, shape, fan_in) in creation order; fan_in 0 marks non-weight scalars."""
    dims = config.dims()
    out: list[tuple[str, tuple, int]] = []
    if config.kind == "sgc":
        return [("W0", (config.in_dim, config.out_dim), config.in_dim),
                ("b0", (config.out_dim,), config.in_dim)]
    for l, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        if config.kind in ("mlp", "gcn"):
            out += [(f"W{l}", (a, b), a), (f"b{l}", (b,), a)]
        elif config.kind == "sage":
            out += [(f"Ws{l}", (a, b), a), (f"Wn{l}", (a, b), a), (f"b{l}", (b,), a)]
        elif config.kind == "gin":
            h = config.hidden
            out += [(f"eps{l}", (1,), 0),
                    (f"Wa{l}", (a, h), a), (f"ba{l}", (h,), a),
                    (f"Wb{l}", (h, b), h), (f"bb{l}", (b,), h)]
        elif config.kind == "cheb":
            out += [(f"W{l}_{o}", (a, b), a) for o in range(config.cheb_order)]
            out.append((f"b{l}", (b,), a))
    return out


def init_params(config: ModelConfig, scheme: str = "default_uniform", seed: int = 0) -> Params:
    """``he``: N(0, 2/fan_in) weights, zero biases. ``default_uniform``: U(±1/sqrt(fan_in))."""
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    params: Params = {}
    for name, shape, fan_in in param_shapes(config):
        if fan_in == 0:
            params[name] = np.zeros(shape)
            continue
        is_bias = len(shape) == 1
        if scheme == "he":
            params[name] = np.zeros(shape) if is_bias else rng.normal(0.0, math.sqrt(2.0 / fan_in), shape)
        else:
            bound = 1.0 / math.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, shape)
    return params


# --- forward / backward ----------------------------------------------------

def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


class GNN:
    """A model bound to one graph and one feature matrix.

    Terms that depend only on ``X`` (e.g. ``Â X`` for GCN, ``Â^K X`` for SGC)
    are computed once here and reused across epochs.
    """

    def __init__(self, config: ModelConfig, prop: Optional[Propagation], x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != config.in_dim:
            raise ValueError(f"features have shape {x.shape}, model expects F={config.in_dim}")
        if config.kind != "mlp":
            if prop is None:
                raise ValueError(f"{config.kind} needs graph propagation operators")
            if x.shape[0] != prop.graph.n:
                raise ValueError(f"features have {x.shape[0]} rows, graph has {prop.graph.n} nodes")
        self.config = config
        self.prop = prop
        self.x = x
        k = config.kind
        if k == "gcn":
            self._x_agg = prop.a_hat @ x
        elif k == "sgc":
            p = x
            for _ in range(config.layers):
                p = prop.a_hat @ p
            self._x_agg = p
        elif k == "sage":
            self._x_agg = prop.mean_adj @ x
        elif k == "gin":
            self._x_agg = prop.adj @ x
        elif k == "cheb":
            self._x_cheb = self._cheb_terms(x)

    # Chebyshev helpers; T_o(L̃) is symmetric so the same recursion serves the adjoint.
    def _cheb_terms(self, h: np.ndarray) -> list[np.ndarray]:
        lt = self.prop.lap_shift
        terms = [h]
        if self.config.cheb_order > 1:
            terms.append(lt @ h)
        for _ in range(2, self.config.cheb_order):
            terms.append(2.0 * (lt @ terms[-1]) - terms[-2])
        return terms

    def _cheb_adjoint(self, qs: list[np.ndarray]) -> np.ndarray:
        # Clenshaw evaluation of sum_o T_o(L̃) q_o
        lt = self.prop.lap_shift
        b1 = np.zeros_like(qs[0])
        b2 = np.zeros_like(qs[0])
        for q in reversed(qs[1:]):
            b1, b2 = q + 2.0 * (lt @ b1) - b2, b1
        return qs[0] + lt @ b1 - b2

    def forward(self, params: Params) -> tuple[np.ndarray, dict]:
        out, cache = getattr(self, f"_fwd_{self.config.kind}")(params)
        cache["out"] = out
        return out, cache

    def backward(self, params: Params, cache: dict, dout: np.ndarray) -> Params:
        return getattr(self, f"_bwd_{self.config.kind}")(params, cache, dout)

    # mlp
    def _fwd_mlp(self, p):
        L = self.config.layers
        hs, zs = [self.x], []
        for l in range(L):
            z = hs[-1] @ p[f"W{l}"] + p[f"b{l}"]
            zs.append(z)
            if l < L - 1:
                hs.append(_relu(z))
        return zs[-1], {"hs": hs, "zs": zs}

    def _bwd_mlp(self, p, cache, g):
        grads = {}
        hs, zs = cache["hs"], cache["zs"]
        for l in reversed(range(self.config.layers)):
            grads[f"W{l}"] = hs[l].T @ g
            grads[f"b{l}"] = g.sum(axis=0)
            if l > 0:
                g = (g @ p[f"W{l}"].T) * (zs[l - 1] > 0)
        return grads

    # gcn: Z = Â H W + b
    def _fwd_gcn(self, p):
        a = self.prop.a_hat
        L = self.config.layers
        hs, zs = [self.x], []
        for l in range(L):
            if l == 0:
                z = self._x_agg @ p["W0"] + p["b0"]
            else:
                z = a @ (hs[-1] @ p[f"W{l}"]) + p[f"b{l}"]
            zs.append(z)
            if l < L - 1:
                hs.append(_relu(z))
        return zs[-1], {"hs": hs, "zs": zs}

    def _bwd_gcn(self, p, cache, g):
        a = self.prop.a_hat
        grads = {}
        hs, zs = cache["hs"], cache["zs"]
        for l in reversed(range(self.config.layers)):
            grads[f"b{l}"] = g.sum(axis=0)
            if l == 0:
                grads["W0"] = self._x_agg.T @ g
                break
            s = a @ g
            grads[f"W{l}"] = hs[l].T @ s
            g = (s @ p[f"W{l}"].T) * (zs[l - 1] > 0)
        return grads

    # sgc: Z = Â^K X W + b
    def _fwd_sgc(self, p):
        return self._x_agg @ p["W0"] + p["b0"], {}

    def _bwd_sgc(self, p, cache, g):
        return {"W0": self._x_agg.T @ g, "b0": g.sum(axis=0)}

    # sage: Z = H Ws + mean_nbr(H) Wn + b
    def _fwd_sage(self, p):
        m = self.prop.mean_adj
        L = self.config.layers
        hs, aggs, zs = [self.x], [], []
        for l in range(L):
            agg = self._x_agg if l == 0 else m @ hs[-1]
            aggs.append(agg)
            z = hs[-1] @ p[f"Ws{l}"] + agg @ p[f"Wn{l}"] + p[f"b{l}"]
            zs.append(z)
            if l < L - 1:
                hs.append(_relu(z))
        return zs[-1], {"hs": hs, "aggs": aggs, "zs": zs}

    def _bwd_sage(self, p, cache, g):
        mt = self.prop.mean_adj_t
        grads = {}
        hs, aggs, zs = cache["hs"], cache["aggs"], cache["zs"]
        for l in reversed(range(self.config.layers)):
            grads[f"Ws{l}"] = hs[l].T @ g
            grads[f"Wn{l}"] = aggs[l].T @ g
            grads[f"b{l}"] = g.sum(axis=0)
            if l > 0:
                dh = g @ p[f"Ws{l}"].T + mt @ (g @ p[f"Wn{l}"].T)
                g = dh * (zs[l - 1] > 0)
        return grads

    # gin: H' = MLP((1 + eps) H + sum_nbr(H)), MLP = Linear-ReLU-Linear
    def _fwd_gin(self, p):
        a = self.prop.adj
        L = self.config.layers
        hs, layers = [self.x], []
        for l in range(L):
            h = hs[-1]
            agg = self._x_agg if l == 0 else a @ h
            z = (1.0 + p[f"eps{l}"][0]) * h + agg
            u = z @ p[f"Wa{l}"] + p[f"ba{l}"]
            v = _relu(u)
            y = v @ p[f"Wb{l}"] + p[f"bb{l}"]
            layers.append((z, u, v, y))
            if l < L - 1:
                hs.append(_relu(y))
        return layers[-1][3], {"hs": hs, "layers": layers}

    def _bwd_gin(self, p, cache, g):
        a = self.prop.adj
        L = self.config.layers
        grads = {}
        hs, layers = cache["hs"], cache["layers"]
        for l in reversed(range(L)):
            z, u, v, y = layers[l]
            if l < L - 1:
                g = g * (y > 0)
            grads[f"Wb{l}"] = v.T @ g
            grads[f"bb{l}"] = g.sum(axis=0)
            du = (g @ p[f"Wb{l}"].T) * (u > 0)
            grads[f"Wa{l}"] = z.T @ du
            grads[f"ba{l}"] = du.sum(axis=0)
            dz = du @ p[f"Wa{l}"].T
            grads[f"eps{l}"] = np.array([np.sum(dz * hs[l])])
            if l > 0:
                g = (1.0 + p[f"eps{l}"][0]) * dz + a @ dz
        return grads

    # cheb: Z = sum_o T_o(L - I) H W_o + b
    def _fwd_cheb(self, p):
        K = self.config.cheb_order
        L = self.config.layers
        hs, terms, zs = [self.x], [], []
        for l in range(L):
            t = self._x_cheb if l == 0 else self._cheb_terms(hs[-1])
            terms.append(t)
            z = sum(t[o] @ p[f"W{l}_{o}"] for o in range(K)) + p[f"b{l}"]
            zs.append(z)
            if l < L - 1:
                hs.append(_relu(z))
        return zs[-1], {"terms": terms, "zs": zs}

    def _bwd_cheb(self, p, cache, g):
        K = self.config.cheb_order
        grads = {}
        terms, zs = cache["terms"], cache["zs"]
        for l in reversed(range(self.config.layers)):
            for o in range(K):
                grads[f"W{l}_{o}"] = terms[l][o].T @ g
            grads[f"b{l}"] = g.sum(axis=0)
            if l > 0:
                dh = self._cheb_adjoint([g @ p[f"W{l}_{o}"].T for o in range(K)])
                g = dh * (zs[l - 1] > 0)
        return grads


def forward(config: ModelConfig, params: Params, prop: Optional[Propagation], x) -> tuple[np.ndarray, dict]:
    return GNN(config, prop, x).forward(params)


# --- losses ----------------------------------------------------------------

def _mask_index(mask: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("mask selects no nodes")
    return idx


def cross_entropy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over masked nodes and its gradient w.r.t. the logits."""
    idx = _mask_index(mask)
    z = logits[idx]
    if labels[idx].min() < 0 or labels[idx].max() >= logits.shape[1]:
        raise ValueError("class label out of range")
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    s = ez.sum(axis=1, keepdims=True)
    logp = z - zmax - np.log(s)
    y = labels[idx]
    loss = -float(np.mean(logp[np.arange(idx.size), y]))
    grad = np.zeros_like(logits)
    prob = ez / s
    prob[np.arange(idx.size), y] -= 1.0
    grad[idx] = prob / idx.size
    return loss, grad


def mse(out: np.ndarray, target: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
    idx = _mask_index(mask)
    target = np.asarray(target, dtype=np.float64).reshape(out.shape)
    diff = out[idx] - target[idx]
    loss = float(np.mean(diff * diff))
    grad = np.zeros_like(out)
    grad[idx] = 2.0 * diff / diff.size
    return loss, grad


def loss(output: np.ndarray, task, mask: Optional[np.ndarray] = None) -> tuple[float, np.ndarray]:
    mask = task.masks.train if mask is None else mask
    if task.loss_kind == "ce":
        return cross_entropy(output, task.y, mask)
    return mse(output, task.y, mask)


def backward(model: GNN, params: Params, cache: dict, task, mask=None) -> Params:
    """Gradients of the masked task loss; requires the cache from ``model.forward``."""
    _, dout = loss(cache["out"], task, mask)
    return model.backward(params, cache, dout)


# --- optimization ----------------------------------------------------------

@dataclass
class AdamState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    step: int = 0


def adam_step(
    state: AdamState,
    params: Params,
    grads: Params,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[Params, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.sum(~np.isfinite(g)))
            raise TrainingDivergence(
                f"non-finite gradient for {name} at step {state.step + 1} ({bad} entries)"
            )
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        m = beta1 * state.m.get(name, 0.0) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1.0 - beta2) * (g * g)
        new_m[name], new_v[name] = m, v
        new_params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return new_params, AdamState(new_m, new_v, t)


def lr_schedule(scheduler: str, epoch: int, base_lr: float, t0: int = 10) -> float:
    """Learning rate at ``epoch``; cosine restarts anneal to 0 and restart every ``t0``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if scheduler == "none":
        return base_lr
    if scheduler == "cosine_restarts":
        t = epoch % t0
        return 0.5 * base_lr * (1.0 + math.cos(math.pi * t / t0))
    raise ValueError(f"unknown scheduler {scheduler!r}")


@dataclass
class TrainResult:
    params: Params
    losses: list


def train(
    config: ModelConfig,
    prop: Optional[Propagation],
    task,
    train_config: TrainConfig = MAIN_TRAIN,
    seed: int = 0,
) -> TrainResult:
    """Full-batch training on the train mask; returns the final-epoch parameters."""
    model = GNN(config, prop, task.features)
    params = init_params(config, train_config.init, seed)
    state = AdamState()
    losses = []
    mask = task.masks.train
    for epoch in range(train_config.epochs):
        out, cache = model.forward(params)
        value, dout = loss(out, task, mask)
        if not math.isfinite(value):
            raise TrainingDivergence(f"non-finite loss at epoch {epoch}")
        losses.append(value)
        grads = model.backward(params, cache, dout)
        lr = lr_schedule(train_config.scheduler, epoch, train_config.learning_rate, train_config.t0)
        params, state = adam_step(
            state, params, grads, lr, train_config.beta1, train_config.beta2, train_config.adam_eps
        )
    return TrainResult(params, losses)


def predict(config: ModelConfig, params: Params, prop, x) -> np.ndarray:
    return forward(config, params, prop, x)[0]


def evaluate(config: ModelConfig, params: Params, prop, task, mask: Optional[np.ndarray] = None) -> float:
    """Accuracy for classification (argmax, lowest index on ties), MSE for regression."""
    mask = task.masks.test if mask is None else mask
    idx = _mask_index(mask)
    out = predict(config, params, prop, task.features)
    if task.loss_kind == "ce":
        return float(np.mean(np.argmax(out[idx], axis=1) == task.y[idx]))
    return mse(out, task.y, mask)[0]


# --- checkpoints -----------------------------------------------------------

def save_checkpoint(path, config: ModelConfig, params: Params, train_config: TrainConfig) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(config),
        "train_config_hash": train_config.digest(),
    }
    arrays = {f"param:{k}": v for k, v in params.items()}
    with open(Path(path), "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), np.uint8), **arrays)


def load_checkpoint(path) -> tuple[ModelConfig, Params, str]:
    with np.load(Path(path)) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        params = {k.split(":", 1)[1]: z[k] for k in z.files if k.startswith("param:")}
    return ModelConfig(**meta["model_config"]), params, meta["train_config_hash"]
