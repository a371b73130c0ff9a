"""Minimal dense neural engine with explicit forward/backward passes.

Everything is float64 and deterministic: parameter init and dropout
masks come from seeded generators, training is single-threaded, and two
runs with the same seed produce bit-identical results.  Forward-only
evaluation may run concurrently on parameter snapshots.

Also hosts the propagation-filter library (one layer-wise closed form
per message-passing architecture) shared by the model and the
equivalence suites.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .graph import (
    DirectedGraph,
    SelfLoopPolicy,
    binarize,
    identity,
    normalize_sym,
    set_self_loops,
)


def _check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.isfinite(x).all():
        raise FloatingPointError(f"non-finite values produced in {where}")
    return x


class Linear:
    """Dense affine map x @ W + b with accumulated gradients."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 bias: bool = True, name: str = "linear"):
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        self.w = rng.uniform(-limit, limit, size=(in_dim, out_dim))
        self.b = np.zeros(out_dim) if bias else None
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b) if bias else None
        self.name = name
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        out = x @ self.w
        if self.b is not None:
            out = out + self.b
        return out

    def backward(self, d: np.ndarray) -> np.ndarray:
        self.dw += self._x.T @ d
        if self.b is not None:
            self.db += d.sum(axis=0)
        return d @ self.w.T

    def params(self) -> dict[str, np.ndarray]:
        out = {f"{self.name}.w": self.w}
        if self.b is not None:
            out[f"{self.name}.b"] = self.b
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {f"{self.name}.w": self.dw}
        if self.b is not None:
            out[f"{self.name}.b"] = self.db
        return out

    def zero_grad(self) -> None:
        self.dw[:] = 0.0
        if self.db is not None:
            self.db[:] = 0.0


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, d: np.ndarray) -> np.ndarray:
        return d * self._mask


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


class Dropout:
    """Inverted dropout; identity at rate 0 and always at eval time."""

    def __init__(self, rate: float, rng: np.random.Generator):
        if not (0.0 <= rate < 1.0):
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self._mask = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        self._mask = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, d: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return d
        return d * self._mask


class BatchNorm1d:
    """Per-feature batch normalization with running statistics."""

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5,
                 name: str = "bn"):
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)
        self.dgamma = np.zeros(dim)
        self.dbeta = np.zeros(dim)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps
        self.name = name
        self._cache = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if train:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean) * inv
            self._cache = (xhat, inv)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean) * inv
            self._cache = None
        return self.gamma * xhat + self.beta

    def backward(self, d: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward through eval-mode batchnorm")
        xhat, inv = self._cache
        n = xhat.shape[0]
        self.dgamma += (d * xhat).sum(axis=0)
        self.dbeta += d.sum(axis=0)
        dxhat = d * self.gamma
        return (inv / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))

    def params(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.gamma": self.gamma, f"{self.name}.beta": self.beta}

    def grads(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.gamma": self.dgamma, f"{self.name}.beta": self.dbeta}

    def zero_grad(self) -> None:
        self.dgamma[:] = 0.0
        self.dbeta[:] = 0.0


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray,
                          idx: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over ``idx`` rows, with exact gradient.

    Returns (loss, dloss/dlogits); the gradient is zero outside ``idx``.
    """
    if idx is None:
        idx = np.arange(logits.shape[0])
    z = logits[idx]
    z = z - z.max(axis=1, keepdims=True)
    expz = np.exp(z)
    prob = expz / expz.sum(axis=1, keepdims=True)
    rows = np.arange(len(idx))
    loss = float(-np.mean(np.log(prob[rows, labels[idx]])))
    dz = prob
    dz[rows, labels[idx]] -= 1.0
    dz /= len(idx)
    dlogits = np.zeros_like(logits)
    dlogits[idx] = dz
    return loss, dlogits


@dataclass
class TrainState:
    """Adam optimizer state: parameters plus moment buffers.

    Updates are deterministic given the seed and the order of gradient
    application; parameter keys are processed in sorted order.
    """

    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int
    lr: float
    seed: int
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: dict[str, np.ndarray], lr: float, seed: int = 0,
              weight_decay: float = 0.0) -> TrainState:
    return TrainState(
        params=params,
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
        step=0, lr=lr, seed=seed, weight_decay=weight_decay,
    )


def adam_step(state: TrainState, grads: dict[str, np.ndarray]) -> TrainState:
    """One bias-corrected adaptive-moment update, in place on the params."""
    state.step += 1
    t = state.step
    for key in sorted(state.params):
        g = grads[key]
        p = state.params[key]
        state.m[key] = state.beta1 * state.m[key] + (1 - state.beta1) * g
        state.v[key] = state.beta2 * state.v[key] + (1 - state.beta2) * g * g
        mhat = state.m[key] / (1 - state.beta1 ** t)
        vhat = state.v[key] / (1 - state.beta2 ** t)
        p -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
    return state


# -- propagation filters ------------------------------------------------------


def propagation_matrix(g: DirectedGraph | sp.csr_array, policy: SelfLoopPolicy,
                       normalized: bool = True) -> sp.csr_array:
    """Binarize, apply the diagonal policy, optionally degree-normalize."""
    adj = g.adj if isinstance(g, DirectedGraph) else g
    m = set_self_loops(binarize(adj), policy)
    return normalize_sym(m) if normalized else m.astype(np.float64)


VALID_FILTERS = ("mlp", "gcn", "sage", "gat", "cheb", "appnp")


@dataclass(frozen=True)
class FilterSpec:
    """One message-passing filter: which closed form, and its knobs.

    ``kind``: mlp | gcn | sage | gat | cheb | appnp.
    ``K`` orders the polynomial filters (cheb, appnp); ``teleport_alpha``
    is required exactly for appnp; ``attention`` supplies fixed edge
    weights for gat (forward only, no attention training);
    ``sage_normalized`` switches the neighbor term of sage from the raw
    adjacency to its degree-normalized form.
    """

    kind: str
    self_loops: SelfLoopPolicy = SelfLoopPolicy.KEEP
    K: int = 1
    teleport_alpha: float | None = None
    attention: np.ndarray | None = None
    sage_normalized: bool = False

    def __post_init__(self):
        if self.kind not in VALID_FILTERS:
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.kind in ("cheb", "appnp") and self.K < 1:
            raise ValueError(f"K must be >= 1 for {self.kind}, got {self.K}")
        if (self.teleport_alpha is not None) != (self.kind == "appnp"):
            raise ValueError("teleport_alpha is required exactly for appnp")
        if self.kind == "appnp" and not (0.0 < self.teleport_alpha < 1.0):
            raise ValueError(f"teleport_alpha must lie in (0, 1), got {self.teleport_alpha}")
        if self.attention is not None and self.kind != "gat":
            raise ValueError("attention weights only apply to gat")


def cheb_basis(norm_adj: sp.csr_array, K: int) -> list[sp.csr_array]:
    """Polynomial basis T_1 = I, T_2 = I - N, T_{k+2} = 2 N T_{k+1} - T_k."""
    n = norm_adj.shape[0]
    eye = identity(n, dtype=np.float64)
    basis = [eye]
    if K >= 2:
        basis.append((eye - norm_adj).tocsr())
    for _ in range(K - 2):
        basis.append((2.0 * (norm_adj @ basis[-1]) - basis[-2]).tocsr())
    return basis[:K]


def filter_forward(spec: FilterSpec, g: DirectedGraph, x: np.ndarray,
                   layers: Sequence[np.ndarray]) -> np.ndarray:
    """Evaluate one layer-wise propagation closed form.

    ``layers`` supplies the weight matrices in the order each form uses
    them: mlp/gcn/gat take one, sage takes (neighbor, self), cheb takes K,
    appnp takes K+1 (the initial transform plus one per teleport).
    """
    if spec.kind == "mlp":
        return x @ layers[0]

    if spec.kind == "gcn":
        p = propagation_matrix(g, spec.self_loops, normalized=True)
        return p @ (x @ layers[0])

    if spec.kind == "sage":
        p = propagation_matrix(g, spec.self_loops, normalized=spec.sage_normalized)
        return p @ (x @ layers[0]) + x @ layers[1]

    if spec.kind == "gat":
        if spec.attention is None:
            raise ValueError("gat filter needs supplied attention weights")
        support = set_self_loops(binarize(g.adj), spec.self_loops)
        att = sp.csr_array(support.astype(np.float64).multiply(spec.attention))
        return att @ (x @ layers[0])

    if spec.kind == "cheb":
        if len(layers) != spec.K:
            raise ValueError(f"cheb K={spec.K} needs {spec.K} weights, got {len(layers)}")
        p = propagation_matrix(g, spec.self_loops, normalized=True)
        out = np.zeros((x.shape[0], layers[0].shape[1]))
        for t, w in zip(cheb_basis(p, spec.K), layers):
            out += t @ (x @ w)
        return out

    # appnp
    if len(layers) != spec.K + 1:
        raise ValueError(f"appnp K={spec.K} needs {spec.K + 1} weights, got {len(layers)}")
    p = propagation_matrix(g, spec.self_loops, normalized=True)
    alpha = spec.teleport_alpha
    h = x @ layers[0]
    for k in range(1, spec.K + 1):
        h = (1 - alpha) * (p @ h) + alpha * (x @ layers[k])
    return h


def stacked_linear_gcn(g: DirectedGraph, x: np.ndarray, n_layers: int,
                       self_loops: SelfLoopPolicy, weights: Sequence[np.ndarray],
                       activation: bool = False, normalized: bool = True) -> np.ndarray:
    """Stack n propagation layers H <- P (H W_l), optionally with ReLU.

    With activation off this collapses to P^n X (W_1 ... W_n) exactly.
    ``normalized=False`` propagates raw integer path counts instead of the
    degree-normalized binary support; that is the linear regime in which a
    k-layer stack on a product matrix collapses exactly to a 2k-layer
    stack on its factors.
    """
    if n_layers < 1:
        raise ValueError(f"need at least one layer, got {n_layers}")
    if len(weights) != n_layers:
        raise ValueError(f"{n_layers} layers need {n_layers} weights, got {len(weights)}")
    if normalized:
        p = propagation_matrix(g, self_loops, normalized=True)
    else:
        p = set_self_loops(g.adj, self_loops).astype(np.float64)
    h = x
    for w in weights:
        h = p @ (h @ w)
        if activation:
            h = relu(h)
    return _check_finite(h, "stacked_linear_gcn")
