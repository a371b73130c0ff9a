"""ScaleNet: mixed bidirectional aggregation over scaled graph matrices.

Each branch aggregates over a pair (M, N) of opposite-direction scaled
matrices, mixed by a single parameter ``alpha`` through the polynomial
weights

    coeff_M = (1 + alpha) * alpha
    coeff_N = (1 + alpha) * (1 - alpha)

so alpha = 1 selects M alone (coefficient 2), alpha = 0 selects N alone,
alpha = 0.5 balances both at 0.75, and alpha = -1 switches the branch
off.  Two special values leave the polynomial: alpha = 2 aggregates over
the support union of M and N and alpha = 3 over their intersection, with
degree normalization recomputed on the combined support (normalization
has to see the true combined degrees, not a blend of per-matrix ones).

A layer runs every branch, fuses them with COMB1 (sum, jumping-knowledge
concatenation, or elementwise max), then optionally batch-norm, ReLU and
dropout.  COMB2 fuses the per-layer outputs (last layer only, sum, or
concatenation) before the linear classifier.

The aggregation weights inside one branch are shared between its M and N
sides; branches and layers have independent parameters.  Parameters are
owned by the training loop; forward-only evaluation on a parameter
snapshot is side-effect free except for dropout/batch-norm train mode.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import scipy.sparse as sp

from .graph import (
    DirectedGraph,
    SelfLoopPolicy,
    binarize,
    intersect,
    normalize_sym,
    set_self_loops,
    union,
)
from .nn import BatchNorm1d, Dropout, Linear
from .scales import parse_word, scale_word_matrix

UNION_ALPHA = 2.0
INTERSECT_ALPHA = 3.0

COMB1_MODES = ("sum", "jk_cat", "jk_max")
COMB2_MODES = ("last", "sum", "jk_cat")
AGG_KINDS = ("gcn", "sage")


def mix_coefficients(alpha: float) -> tuple[float, float]:
    """Polynomial mixing weights (coeff_M, coeff_N) for a branch."""
    return (1.0 + alpha) * alpha, (1.0 + alpha) * (1.0 - alpha)


@dataclass(frozen=True)
class BranchSpec:
    """One aggregation branch: a matrix pair, a mix alpha, a diagonal policy."""

    pair: tuple[str, str]
    alpha: float
    self_loops: SelfLoopPolicy = SelfLoopPolicy.KEEP

    def __post_init__(self):
        if self.pair[0] == self.pair[1]:
            raise ValueError(f"branch pair must name two distinct matrices, got {self.pair}")


@dataclass
class ScaleNetConfig:
    """Full model + training configuration (JSON-serializable)."""

    branches: list[BranchSpec]
    comb1: str = "sum"
    comb2: str = "last"
    layers: int = 1
    hidden: int = 16
    agg: str = "gcn"
    batchnorm: bool = False
    activation: bool = True
    dropout: float = 0.0
    lr: float = 0.01
    epochs: int = 200
    seed: int = 0
    weight_decay: float = 0.0
    patience: int = 50
    sage_normalized: bool = False
    zero_input: bool = False

    def __post_init__(self):
        if not self.branches:
            raise ValueError("at least one branch is required")
        if self.comb1 not in COMB1_MODES:
            raise ValueError(f"comb1 must be one of {COMB1_MODES}, got {self.comb1!r}")
        if self.comb2 not in COMB2_MODES:
            raise ValueError(f"comb2 must be one of {COMB2_MODES}, got {self.comb2!r}")
        if self.agg not in AGG_KINDS:
            raise ValueError(f"agg must be one of {AGG_KINDS}, got {self.agg!r}")
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if self.hidden < 1:
            raise ValueError(f"hidden must be >= 1, got {self.hidden}")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScaleNetConfig":
        data = dict(data)
        branches = [
            BranchSpec(
                pair=(b["pair"][0], b["pair"][1]),
                alpha=float(b["alpha"]),
                self_loops=SelfLoopPolicy(b.get("self_loops", "keep")),
            )
            for b in data.pop("branches")
        ]
        return cls(branches=branches, **data)

    def to_dict(self) -> dict[str, Any]:
        return {
            "branches": [
                {"pair": list(b.pair), "alpha": b.alpha, "self_loops": b.self_loops.value}
                for b in self.branches
            ],
            "comb1": self.comb1,
            "comb2": self.comb2,
            "layers": self.layers,
            "hidden": self.hidden,
            "agg": self.agg,
            "batchnorm": self.batchnorm,
            "activation": self.activation,
            "dropout": self.dropout,
            "lr": self.lr,
            "epochs": self.epochs,
            "seed": self.seed,
            "weight_decay": self.weight_decay,
            "patience": self.patience,
            "sage_normalized": self.sage_normalized,
            "zero_input": self.zero_input,
        }


@dataclass(frozen=True)
class ModelOutput:
    logits: np.ndarray
    hidden_states: list[np.ndarray]


# -- branch matrix preparation -----------------------------------------------


def _member_support(g: DirectedGraph, name: str, policy: SelfLoopPolicy) -> sp.csr_array:
    return set_self_loops(binarize(scale_word_matrix(g, parse_word(name))), policy)


def _as_propagation(support: sp.csr_array, kind: str, sage_normalized: bool) -> sp.csr_array:
    if kind == "gcn" or (kind == "sage" and sage_normalized):
        return normalize_sym(support)
    return support.astype(np.float64)


def branch_parts(g: DirectedGraph, spec: BranchSpec, kind: str,
                 sage_normalized: bool = False) -> list[tuple[sp.csr_array, sp.csr_array, float]]:
    """Resolve a branch into weighted propagation matrices.

    Returns [(P, P^T, coeff), ...]: two entries for the polynomial mix,
    one for the union/intersection modes.  P^T is precomputed because the
    backward pass propagates gradients against the edge direction.
    """
    m_sup = _member_support(g, spec.pair[0], spec.self_loops)
    n_sup = _member_support(g, spec.pair[1], spec.self_loops)
    if spec.alpha == UNION_ALPHA:
        p = _as_propagation(union(m_sup, n_sup), kind, sage_normalized)
        return [(p, p.T.tocsr(), 1.0)]
    if spec.alpha == INTERSECT_ALPHA:
        p = _as_propagation(intersect(m_sup, n_sup), kind, sage_normalized)
        return [(p, p.T.tocsr(), 1.0)]
    cm, cn = mix_coefficients(spec.alpha)
    pm = _as_propagation(m_sup, kind, sage_normalized)
    pn = _as_propagation(n_sup, kind, sage_normalized)
    return [(pm, pm.T.tocsr(), cm), (pn, pn.T.tocsr(), cn)]


def agg_b(alpha: float, m: sp.csr_array, n: sp.csr_array, x: np.ndarray,
          w: np.ndarray, b: np.ndarray | None = None, *, kind: str = "gcn",
          w_self: np.ndarray | None = None,
          sage_normalized: bool = False) -> np.ndarray:
    """One-shot bidirectional aggregation over raw supports M and N.

    For gcn each side is AGG(P, X) = P_norm (X w) + b; for sage it is
    P (X w) + X w_self + b.  The polynomial coefficients scale the whole
    AGG output, so alpha = -1 yields exactly zero; alpha in {2, 3}
    aggregates once over the (re-normalized) union or intersection.
    """
    spec = BranchSpec(pair=("__m", "__n"), alpha=alpha)
    if alpha == UNION_ALPHA:
        parts = [(None, None, 1.0)]
        p = _as_propagation(union(binarize(m), binarize(n)), kind, sage_normalized)
        parts = [(p, None, 1.0)]
    elif alpha == INTERSECT_ALPHA:
        p = _as_propagation(intersect(binarize(m), binarize(n)), kind, sage_normalized)
        parts = [(p, None, 1.0)]
    else:
        cm, cn = mix_coefficients(alpha)
        parts = [
            (_as_propagation(binarize(m), kind, sage_normalized), None, cm),
            (_as_propagation(binarize(n), kind, sage_normalized), None, cn),
        ]
    csum = sum(c for _, _, c in parts)
    xw = x @ w
    out = np.zeros((x.shape[0], w.shape[1]))
    for p, _, c in parts:
        if c != 0.0:
            out += c * (p @ xw)
    if kind == "sage":
        if w_self is None:
            raise ValueError("sage aggregation needs w_self")
        out += csum * (x @ w_self)
    if b is not None:
        out += csum * b
    return out


# -- layers -------------------------------------------------------------------


class _BranchLayer:
    """Aggregation weights for one branch at one depth, with backward."""

    def __init__(self, in_dim: int, hidden: int, kind: str,
                 rng: np.random.Generator, name: str):
        limit = np.sqrt(6.0 / (in_dim + hidden))
        self.kind = kind
        self.name = name
        self.w = rng.uniform(-limit, limit, size=(in_dim, hidden))
        self.w_self = (rng.uniform(-limit, limit, size=(in_dim, hidden))
                       if kind == "sage" else None)
        self.b = np.zeros(hidden)
        self.dw = np.zeros_like(self.w)
        self.dw_self = np.zeros_like(self.w_self) if self.w_self is not None else None
        self.db = np.zeros_like(self.b)
        self._cache = None

    def forward(self, h: np.ndarray,
                parts: list[tuple[sp.csr_array, sp.csr_array, float]]) -> np.ndarray:
        csum = sum(c for _, _, c in parts)
        xw = h @ self.w
        out = np.zeros((h.shape[0], self.w.shape[1]))
        for p, _, c in parts:
            if c != 0.0:
                out += c * (p @ xw)
        if self.kind == "sage":
            out += csum * (h @ self.w_self)
        out += csum * self.b
        self._cache = (h, xw, parts, csum)
        return out

    def backward(self, d: np.ndarray) -> np.ndarray:
        h, xw, parts, csum = self._cache
        dxw = np.zeros_like(xw)
        for _, pt, c in parts:
            if c != 0.0:
                dxw += c * (pt @ d)
        self.dw += h.T @ dxw
        self.db += csum * d.sum(axis=0)
        dh = dxw @ self.w.T
        if self.kind == "sage":
            self.dw_self += csum * (h.T @ d)
            dh = dh + csum * (d @ self.w_self.T)
        return dh

    def params(self) -> dict[str, np.ndarray]:
        out = {f"{self.name}.w": self.w, f"{self.name}.b": self.b}
        if self.w_self is not None:
            out[f"{self.name}.w_self"] = self.w_self
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {f"{self.name}.w": self.dw, f"{self.name}.b": self.db}
        if self.dw_self is not None:
            out[f"{self.name}.w_self"] = self.dw_self
        return out

    def zero_grad(self) -> None:
        self.dw[:] = 0.0
        self.db[:] = 0.0
        if self.dw_self is not None:
            self.dw_self[:] = 0.0


class ScaleNet:
    """The full model: branches -> COMB1 (+BN/ReLU/dropout) x L -> COMB2 -> classifier."""

    def __init__(self, cfg: ScaleNetConfig, g: DirectedGraph, in_dim: int,
                 n_classes: int):
        self.cfg = cfg
        self.g = g
        self.in_dim = in_dim
        self.n_classes = n_classes
        rng = np.random.default_rng(cfg.seed)
        self._dropout_rng = np.random.default_rng([cfg.seed, 0x5EED])

        self.parts = [
            branch_parts(g, spec, cfg.agg, cfg.sage_normalized)
            for spec in cfg.branches
        ]

        nb = len(cfg.branches)
        self.branch_layers: list[list[_BranchLayer]] = []
        self.projections: list[Linear | None] = []
        self.bns: list[BatchNorm1d | None] = []
        self.dropouts: list[Dropout] = []
        for l in range(cfg.layers):
            d_in = in_dim if l == 0 else cfg.hidden
            self.branch_layers.append([
                _BranchLayer(d_in, cfg.hidden, cfg.agg, rng, f"layer{l}.branch{bi}")
                for bi in range(nb)
            ])
            if cfg.comb1 == "jk_cat":
                self.projections.append(
                    Linear(nb * cfg.hidden, cfg.hidden, rng, name=f"layer{l}.proj"))
            else:
                self.projections.append(None)
            self.bns.append(BatchNorm1d(cfg.hidden, name=f"layer{l}.bn")
                            if cfg.batchnorm else None)
            self.dropouts.append(Dropout(cfg.dropout, self._dropout_rng))

        clf_in = cfg.hidden * (cfg.layers if cfg.comb2 == "jk_cat" else 1)
        self.classifier = Linear(clf_in, n_classes, rng, name="classifier")
        self._cache = None

    # -- parameter plumbing --

    def params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layers in self.branch_layers:
            for bl in layers:
                out.update(bl.params())
        for proj in self.projections:
            if proj is not None:
                out.update(proj.params())
        for bn in self.bns:
            if bn is not None:
                out.update(bn.params())
        out.update(self.classifier.params())
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layers in self.branch_layers:
            for bl in layers:
                out.update(bl.grads())
        for proj in self.projections:
            if proj is not None:
                out.update(proj.grads())
        for bn in self.bns:
            if bn is not None:
                out.update(bn.grads())
        out.update(self.classifier.grads())
        return out

    def zero_grad(self) -> None:
        for layers in self.branch_layers:
            for bl in layers:
                bl.zero_grad()
        for proj in self.projections:
            if proj is not None:
                proj.zero_grad()
        for bn in self.bns:
            if bn is not None:
                bn.zero_grad()
        self.classifier.zero_grad()

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())

    # -- forward / backward --

    def forward(self, x: np.ndarray, train: bool = False) -> ModelOutput:
        cfg = self.cfg
        h = x
        hiddens: list[np.ndarray] = []
        layer_caches = []
        for l in range(cfg.layers):
            branch_outs = [
                self.branch_layers[l][bi].forward(h, self.parts[bi])
                for bi in range(len(cfg.branches))
            ]
            cache: dict[str, Any] = {"n_branches": len(branch_outs)}
            if cfg.comb1 == "sum":
                z = branch_outs[0].copy()
                for out in branch_outs[1:]:
                    z += out
            elif cfg.comb1 == "jk_cat":
                cat = np.concatenate(branch_outs, axis=1)
                z = self.projections[l].forward(cat)
            else:  # jk_max
                stack = np.stack(branch_outs, axis=0)
                amax = stack.argmax(axis=0)
                cache["argmax"] = amax
                z = stack.max(axis=0)
            if self.bns[l] is not None:
                z = self.bns[l].forward(z, train)
            if cfg.activation:
                cache["relu_in"] = z
                z = np.where(z > 0, z, 0.0)
            z = self.dropouts[l].forward(z, train)
            hiddens.append(z)
            layer_caches.append(cache)
            h = z

        if cfg.comb2 == "last":
            feats = hiddens[-1]
        elif cfg.comb2 == "sum":
            feats = hiddens[0].copy()
            for z in hiddens[1:]:
                feats += z
        else:
            feats = np.concatenate(hiddens, axis=1)
        logits = self.classifier.forward(feats)
        self._cache = {"layer_caches": layer_caches, "n": x.shape[0]}
        return ModelOutput(logits=logits, hidden_states=hiddens)

    def backward(self, dlogits: np.ndarray) -> None:
        """Accumulate parameter gradients from dLoss/dlogits.

        Requires a preceding train-mode forward; gradient flow follows the
        same branch/COMB structure in reverse, summing contributions where
        the forward pass fanned out.
        """
        cfg = self.cfg
        cache = self._cache
        layer_caches = cache["layer_caches"]
        dfeats = self.classifier.backward(dlogits)

        dhidden = [np.zeros((cache["n"], cfg.hidden)) for _ in range(cfg.layers)]
        if cfg.comb2 == "last":
            dhidden[-1] += dfeats
        elif cfg.comb2 == "sum":
            for dz in dhidden:
                dz += dfeats
        else:
            for l in range(cfg.layers):
                dhidden[l] += dfeats[:, l * cfg.hidden:(l + 1) * cfg.hidden]

        for l in range(cfg.layers - 1, -1, -1):
            dz = dhidden[l]
            dz = self.dropouts[l].backward(dz)
            if cfg.activation:
                dz = dz * (layer_caches[l]["relu_in"] > 0)
            if self.bns[l] is not None:
                dz = self.bns[l].backward(dz)
            if cfg.comb1 == "sum":
                branch_ds = [dz] * len(cfg.branches)
            elif cfg.comb1 == "jk_cat":
                dcat = self.projections[l].backward(dz)
                branch_ds = [
                    dcat[:, bi * cfg.hidden:(bi + 1) * cfg.hidden]
                    for bi in range(len(cfg.branches))
                ]
            else:
                amax = layer_caches[l]["argmax"]
                branch_ds = [
                    dz * (amax == bi)
                    for bi in range(len(cfg.branches))
                ]
            dh = None
            for bi, bd in enumerate(branch_ds):
                contrib = self.branch_layers[l][bi].backward(bd)
                dh = contrib if dh is None else dh + contrib
            if l > 0:
                dhidden[l - 1] += dh

    def clone(self) -> "ScaleNet":
        """Deep copy sharing nothing mutable; used for best-epoch snapshots."""
        return copy.deepcopy(self)
