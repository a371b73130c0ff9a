"""Scaled adjacency construction and structural invariance machinery.

A *scale word* is an ordered sequence of hops, each either along an edge
(FWD, matrix ``A``) or against one (REV, matrix ``A^T``).  The matrix of a
word is the left-to-right product of the corresponding factors, so the
word names double as matrix names: ``"AA^T"`` is ``matmul(A, A^T)``.

The higher-order meeting/diverging proximity matrices are

    M(k) = A^(k-1) (A^T)^(k-1)      paths that run k-1 steps forward,
                                    then k-1 steps back
    D(k) = (A^T)^(k-1) A^(k-1)      the mirrored construction

Every node with any out-edge produces a nonzero M(2) diagonal (its
forward step can be retraced), and symmetrically for D(2) and in-edges.
These *generated self-loops* leak lower-order proximity into higher
orders and densify M(k); pruning removes the diagonal from each order
before computing the next, so nonzeros stay pure k-order proximities.

All functions here are pure over immutable inputs and safe to call in
parallel; there is no shared mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .graph import (
    DirectedGraph,
    SelfLoopPolicy,
    binarize,
    canonicalize,
    identity,
    matmul,
    normalize_sym,
    set_self_loops,
    sparse_equal,
    transpose,
    union,
)


class Hop(Enum):
    """One hop of a scale word: along an edge or against it."""

    FWD = "A"
    REV = "A^T"


ScaleWord = tuple[Hop, ...]

# Second-scale building blocks and their two-hop expansions.
BLOCK_WORDS: dict[str, ScaleWord] = {
    "AA": (Hop.FWD, Hop.FWD),
    "AA^T": (Hop.FWD, Hop.REV),
    "A^TA": (Hop.REV, Hop.FWD),
    "A^TA^T": (Hop.REV, Hop.REV),
}

FIRST_SCALE_NAMES = ("A", "A^T")
SECOND_SCALE_NAMES = ("AA", "AA^T", "A^TA", "A^TA^T")


def word_name(word: Sequence[Hop]) -> str:
    return "".join(h.value for h in word)


def parse_word(name: str) -> ScaleWord:
    """Parse a product name like ``"AA^TA"`` into a scale word."""
    hops: list[Hop] = []
    i = 0
    while i < len(name):
        if name[i] != "A":
            raise ValueError(f"cannot parse scale word {name!r} at position {i}")
        if name[i + 1 : i + 3] == "^T":
            hops.append(Hop.REV)
            i += 3
        else:
            hops.append(Hop.FWD)
            i += 1
    if not hops:
        raise ValueError("empty scale word")
    return tuple(hops)


def scale_word_matrix(g: DirectedGraph, word: Sequence[Hop]) -> sp.csr_array:
    """Left-to-right product of A / A^T factors named by ``word``.

    Entries are exact integer path counts: entry (i, j) counts the walks
    from i to j that follow each hop's direction in order.
    """
    if len(word) < 1:
        raise ValueError("scale word must have at least one hop")
    a = g.adj
    at = transpose(a)
    out = a if word[0] is Hop.FWD else at
    for hop in word[1:]:
        out = matmul(out, a if hop is Hop.FWD else at)
    return out


@dataclass(frozen=True)
class ScaledGraphSet:
    """All scaled matrices of one scale level, with provenance.

    k=1 holds exactly {A, A^T}; k=2 exactly {AA, AA^T, A^TA, A^TA^T}.
    Members are binarized and then diagonal-policied.
    """

    scale: int
    members: dict[str, sp.csr_array]
    policy: SelfLoopPolicy
    lineage: str


def build_scaled_set(g: DirectedGraph, k: int, policy: SelfLoopPolicy) -> ScaledGraphSet:
    if k not in (1, 2):
        raise ValueError(f"scaled sets are built for k in {{1, 2}}, got {k}")
    names = FIRST_SCALE_NAMES if k == 1 else SECOND_SCALE_NAMES
    members = {}
    for name in names:
        m = scale_word_matrix(g, parse_word(name))
        members[name] = set_self_loops(binarize(m), policy)
    return ScaledGraphSet(scale=k, members=members, policy=policy,
                          lineage=g.content_hash())


@dataclass(frozen=True)
class ProximityMatrix:
    """k-order meeting (M) or diverging (D) proximity, optionally pruned."""

    order: int
    kind: str  # "M" or "D"
    matrix: sp.csr_array
    pruned: bool


def korder_proximity(g: DirectedGraph, k: int, kind: str = "M",
                     prune: bool = False) -> ProximityMatrix:
    """Binarized k-order proximity matrix.

    Unpruned: the full product A^(k-1) (A^T)^(k-1) (or its mirror for D).
    Pruned: the diagonal is removed from each intermediate order before it
    feeds the next one, via the recursion  P(j+1) = offdiag(A P(j) A^T)
    starting from P(2) = offdiag(A A^T)  (mirrored for D), which keeps
    every order free of generated self-loops.
    """
    if k < 2:
        raise ValueError(f"proximity order must be >= 2, got {k}")
    if kind not in ("M", "D"):
        raise ValueError(f"proximity kind must be 'M' or 'D', got {kind!r}")
    a = g.adj
    at = transpose(a)
    left, right = (a, at) if kind == "M" else (at, a)

    if not prune:
        fwd = left
        for _ in range(k - 2):
            fwd = matmul(fwd, left)
        out = fwd
        for _ in range(k - 1):
            out = matmul(out, right)
        return ProximityMatrix(order=k, kind=kind, matrix=binarize(out), pruned=False)

    cur = set_self_loops(matmul(left, right), SelfLoopPolicy.REMOVE)
    for _ in range(k - 2):
        cur = set_self_loops(matmul(matmul(left, cur), right), SelfLoopPolicy.REMOVE)
    return ProximityMatrix(order=k, kind=kind, matrix=binarize(cur), pruned=True)


def remove_shared_edges(higher: sp.csr_array,
                        lowers: Iterable[sp.csr_array]) -> sp.csr_array:
    """Drop from ``higher`` every entry whose position appears in any lower matrix."""
    out = binarize(higher)
    for low in lowers:
        if low.shape != higher.shape:
            raise ValueError(f"shape mismatch: {higher.shape} vs {low.shape}")
        overlap = sp.csr_array(out.multiply(binarize(low)))
        out = binarize(out - overlap)
    return out


def inception_uniform(g: DirectedGraph, k_max: int) -> list[sp.csr_array]:
    """Multi-order proximity set with all structural weights equal to 1.

    Order 1 contributes the normalized adjacency; each order k >= 2
    contributes the normalized binarized M(k) and D(k).  Uniform weights
    stand in for the spectral edge weights of inception-style digraph
    models; the supports are identical and the cost is a handful of
    sparse products.
    """
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    mats = [normalize_sym(binarize(g.adj))]
    for k in range(2, k_max + 1):
        mats.append(normalize_sym(korder_proximity(g, k, "M").matrix))
        mats.append(normalize_sym(korder_proximity(g, k, "D").matrix))
    return mats


def sample_uniform_weights(support: sp.csr_array, low: float, high: float,
                           rng: np.random.Generator) -> sp.csr_array:
    """Reweight a support with i.i.d. Uniform[low, high] draws.

    Draws are assigned in canonical entry order, so a fixed generator
    state reproduces the same weighted matrix bit for bit.
    """
    if not (0 < low <= high):
        raise ValueError(f"need 0 < low <= high, got [{low}, {high}]")
    out = canonicalize(support).astype(np.float64)
    out.data = rng.uniform(low, high, size=out.nnz)
    return out


def random_weight_inception(g: DirectedGraph, k_max: int, low: float,
                            high: float, seed: int) -> list[sp.csr_array]:
    """Same supports as :func:`inception_uniform`, random edge weights.

    Weights are drawn uniformly from [low, high] with a seeded generator
    and then symmetrically normalized.  ``low == high`` degenerates to the
    uniform-weight set.
    """
    rng = np.random.default_rng(seed)
    supports = [binarize(g.adj)]
    for k in range(2, k_max + 1):
        supports.append(korder_proximity(g, k, "M").matrix)
        supports.append(korder_proximity(g, k, "D").matrix)
    return [normalize_sym(sample_uniform_weights(s, low, high, rng)) for s in supports]


@dataclass(frozen=True)
class SelfLoopExpansionReport:
    """Integer-exactness record for the four (A+I)-product identities."""

    deviations: dict[str, int]

    @property
    def max_deviation(self) -> int:
        return max(self.deviations.values())

    @property
    def exact(self) -> bool:
        return self.max_deviation == 0


def selfloop_expansion_report(a: sp.csr_array) -> SelfLoopExpansionReport:
    """Check the four expansions of products of (A + I) factors exactly.

        (A+I)(A^T+I) = AA^T + A + A^T + I
        (A^T+I)(A+I) = A^TA + A + A^T + I
        (A+I)(A+I)   = AA   + 2A      + I
        (A^T+I)(A^T+I) = A^TA^T + 2A^T + I

    The identities hold over the integers for any square A; a nonzero
    deviation means the matrix algebra itself is broken.
    """
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"square matrix required, got {a.shape}")
    a = canonicalize(a).astype(np.int64)
    n = a.shape[0]
    eye = identity(n)
    at = transpose(a)
    ahat = canonicalize(a + eye)
    athat = canonicalize(at + eye)

    cases = {
        "AhatAhatT": (matmul(ahat, athat), matmul(a, at) + a + at + eye),
        "AhatTAhat": (matmul(athat, ahat), matmul(at, a) + a + at + eye),
        "AhatAhat": (matmul(ahat, ahat), matmul(a, a) + 2 * a + eye),
        "AhatTAhatT": (matmul(athat, athat), matmul(at, at) + 2 * at + eye),
    }
    deviations = {}
    for name, (lhs, rhs) in cases.items():
        diff = canonicalize(lhs - canonicalize(rhs))
        deviations[name] = int(abs(diff.data).max()) if diff.nnz else 0
    return SelfLoopExpansionReport(deviations=deviations)


def word_embedding_witness(blocks: Sequence[str | ScaleWord]) -> ScaleWord:
    """Flatten a word over second-scale blocks into a word over {FWD, REV}.

    A length-k sequence of blocks from {AA, AA^T, A^TA, A^TA^T} names the
    same matrix as its length-2k flattening over {A, A^T}; the returned
    word is that flattening.  Matrix-level equality is what the property
    suites check.
    """
    flat: list[Hop] = []
    for block in blocks:
        if isinstance(block, str):
            if block not in BLOCK_WORDS:
                raise ValueError(f"unknown second-scale block {block!r}")
            flat.extend(BLOCK_WORDS[block])
        else:
            if len(block) != 2:
                raise ValueError("second-scale blocks must be two hops long")
            flat.extend(block)
    if not flat:
        raise ValueError("empty block sequence")
    return tuple(flat)


def ego_graph(g: DirectedGraph, center: int, depth: int,
              word: Sequence[Hop]) -> tuple[set[int], set[tuple[int, int]]]:
    """Breadth-first ego-graph over the scaled matrix of ``word``.

    Starting from ``center``, follows scaled edges (i, j) with matrix
    entry (i, j) nonzero for up to ``depth`` hops.  Returns the reached
    node set (center included) and the set of scaled edges traversed
    while expanding nodes strictly inside the depth bound.
    """
    if not (0 <= center < g.n):
        raise ValueError(f"center {center} out of range for n={g.n}")
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    m = binarize(scale_word_matrix(g, word))
    nodes = {center}
    edges: set[tuple[int, int]] = set()
    frontier = [center]
    for _ in range(depth):
        nxt = []
        for u in frontier:
            start, stop = m.indptr[u], m.indptr[u + 1]
            for v in m.indices[start:stop]:
                v = int(v)
                edges.add((u, v))
                if v not in nodes:
                    nodes.add(v)
                    nxt.append(v)
        frontier = nxt
        if not frontier:
            break
    return nodes, edges
