"""Sparse directed-graph representation and integer matrix algebra.

A directed graph on ``n`` nodes is held as an ``n x n`` CSR matrix of
non-negative integer path counts.  All operations return matrices in a
canonical form (sorted indices, duplicates summed, no explicit zeros) so
that two matrices are equal exactly when their CSR internals are equal.

Integer path counts, not booleans, are the canonical internal value:
identities such as ``(A+I)(A+I) = AA + 2A + I`` hold over the integers but
not over a boolean OR/AND semiring.  :func:`binarize` converts counts to
edge existence explicitly.

All matrices are immutable by convention once built and safe to share
read-only across threads.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence, TextIO

import numpy as np
import scipy.sparse as sp


class SelfLoopPolicy(Enum):
    """What to do with the diagonal of a square adjacency-like matrix."""

    ADD = "add"
    REMOVE = "remove"
    KEEP = "keep"


def canonicalize(m: sp.csr_array) -> sp.csr_array:
    """Return ``m`` as a CSR array in canonical form.

    Canonical form: duplicate entries summed, explicit zeros dropped,
    column indices sorted within each row.  Matrix equality used across
    the package is structural equality of this form.
    """
    m = sp.csr_array(m)
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    return m


def sparse_equal(a: sp.csr_array, b: sp.csr_array) -> bool:
    """Exact structural equality of two canonical sparse matrices."""
    a = canonicalize(a)
    b = canonicalize(b)
    return (
        a.shape == b.shape
        and np.array_equal(a.indptr, b.indptr)
        and np.array_equal(a.indices, b.indices)
        and np.array_equal(a.data, b.data)
    )


def identity(n: int, dtype=np.int64) -> sp.csr_array:
    return canonicalize(sp.eye_array(n, dtype=dtype, format="csr"))


@dataclass(frozen=True)
class DirectedGraph:
    """Directed graph: node count plus sparse integer adjacency.

    ``adj[i, j]`` counts parallel edges (or paths, for derived matrices)
    from node ``i`` to node ``j``.  Node ids are dense 0-based integers.
    """

    n: int
    adj: sp.csr_array

    def __post_init__(self) -> None:
        if self.n < 0:
            raise ValueError(f"node count must be >= 0, got {self.n}")
        object.__setattr__(self, "adj", canonicalize(self.adj))
        if self.adj.shape != (self.n, self.n):
            raise ValueError(
                f"adjacency shape {self.adj.shape} does not match n={self.n}"
            )
        if self.adj.nnz and self.adj.data.min() <= 0:
            raise ValueError("stored adjacency entries must be positive")

    @property
    def num_edges(self) -> int:
        return int(self.adj.nnz)

    def out_degrees(self) -> np.ndarray:
        return np.asarray(self.adj.sum(axis=1)).ravel()

    def in_degrees(self) -> np.ndarray:
        return np.asarray(self.adj.sum(axis=0)).ravel()

    def content_hash(self) -> str:
        """Stable hash of (n, sorted edge triples); identifies the graph."""
        h = hashlib.sha256()
        h.update(str(self.n).encode())
        coo = self.adj.tocoo()
        for i, j, v in zip(coo.row, coo.col, coo.data):
            h.update(f"{i},{j},{v};".encode())
        return h.hexdigest()


def from_edge_list(edges: Sequence[tuple[int, int]], n: int) -> DirectedGraph:
    """Build a graph from (src, dst) pairs; duplicates accumulate counts.

    Raises ValueError naming the offending entry (1-based position) when
    an endpoint falls outside ``[0, n)``.
    """
    if n < 0:
        raise ValueError(f"node count must be >= 0, got {n}")
    rows = np.empty(len(edges), dtype=np.int64)
    cols = np.empty(len(edges), dtype=np.int64)
    for k, (src, dst) in enumerate(edges):
        if not (0 <= src < n) or not (0 <= dst < n):
            raise ValueError(
                f"edge #{k + 1} ({src}, {dst}) out of range for n={n}"
            )
        rows[k] = src
        cols[k] = dst
    data = np.ones(len(edges), dtype=np.int64)
    adj = sp.csr_array((data, (rows, cols)), shape=(n, n))
    return DirectedGraph(n=n, adj=canonicalize(adj))


def transpose(m: sp.csr_array) -> sp.csr_array:
    """Reverse every edge: (i, j) -> (j, i)."""
    return canonicalize(m.transpose())


def matmul(a: sp.csr_array, b: sp.csr_array) -> sp.csr_array:
    """Sparse matrix product with exact integer path counts.

    ``(a @ b)[i, j]`` counts two-segment paths i -> k -> j weighted by
    the entry products.  int64 accumulation is exact at desk scale.
    """
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return canonicalize(a @ b)


def binarize(m: sp.csr_array) -> sp.csr_array:
    """Map every nonzero entry to integer 1 (edge existence)."""
    m = canonicalize(m)
    out = m.copy()
    out.data = np.ones(m.nnz, dtype=np.int64)
    return out


def set_self_loops(m: sp.csr_array, policy: SelfLoopPolicy) -> sp.csr_array:
    """Apply a diagonal policy to a square matrix.

    ADD raises every diagonal entry to at least 1 (existing larger values
    are kept), REMOVE zeroes the diagonal, KEEP returns the matrix as is.
    """
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"self-loop policy requires a square matrix, got {m.shape}")
    m = canonicalize(m)
    if policy is SelfLoopPolicy.KEEP:
        return m
    diag = m.diagonal()
    if policy is SelfLoopPolicy.REMOVE:
        delta = -diag
    else:  # ADD
        delta = np.maximum(diag, 1) - diag
    if not delta.any():
        return m
    return canonicalize(m + sp.diags_array(delta, format="csr").astype(m.dtype))


def union(a: sp.csr_array, b: sp.csr_array) -> sp.csr_array:
    """Support-wise OR of two same-shape matrices, binarized."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return binarize(binarize(a) + binarize(b))


def intersect(a: sp.csr_array, b: sp.csr_array) -> sp.csr_array:
    """Support-wise AND of two same-shape matrices, binarized."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return binarize(sp.csr_array(a.multiply(b)))


def normalize_sym(m: sp.csr_array) -> sp.csr_array:
    """Symmetric degree normalization: entry / sqrt(rowdeg * coldeg).

    Degrees are the row and column sums of ``m`` itself.  Rows or columns
    with zero degree produce all-zero rows/columns rather than NaN or Inf;
    real directed datasets routinely contain nodes with no in-edges, and
    downstream aggregation treats their rows as empty neighborhoods.
    """
    m = canonicalize(m).astype(np.float64)
    row = np.asarray(m.sum(axis=1)).ravel()
    col = np.asarray(m.sum(axis=0)).ravel()
    with np.errstate(divide="ignore"):
        rinv = np.where(row > 0, 1.0 / np.sqrt(row), 0.0)
        cinv = np.where(col > 0, 1.0 / np.sqrt(col), 0.0)
    dr = sp.diags_array(rinv, format="csr")
    dc = sp.diags_array(cinv, format="csr")
    return canonicalize(dr @ m @ dc)


# -- text formats -----------------------------------------------------------
#
# Edge-list file: one `src<TAB>dst` per line, `#` starts a comment line.
# Matrix dump: `rows cols nnz` header, then `i j v` triples sorted by (i, j).


def read_edge_list(path: str, n: int | None = None) -> tuple[DirectedGraph, dict[int, int] | None]:
    """Read a TSV edge list.

    With ``n`` given, node ids must already be dense 0-based integers in
    ``[0, n)`` and violations are rejected with the offending line number.
    Without ``n``, arbitrary integer ids are remapped to dense 0-based ids
    (sorted order) and the mapping ``original -> dense`` is returned.
    """
    raw: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split("\t")
            if len(parts) == 1:  # tolerate space-separated files
                parts = stripped.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected `src<TAB>dst`, got {line!r}")
            try:
                src, dst = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-integer node id in {line!r}") from exc
            raw.append((lineno, src, dst))

    if n is not None:
        for lineno, src, dst in raw:
            if not (0 <= src < n) or not (0 <= dst < n):
                raise ValueError(
                    f"{path}:{lineno}: edge ({src}, {dst}) out of range for n={n}"
                )
        return from_edge_list([(s, d) for _, s, d in raw], n), None

    ids = sorted({v for _, s, d in raw for v in (s, d)})
    mapping = {orig: dense for dense, orig in enumerate(ids)}
    edges = [(mapping[s], mapping[d]) for _, s, d in raw]
    return from_edge_list(edges, len(ids)), mapping


def dump_matrix(m: sp.csr_array, fh: TextIO) -> None:
    """Write a matrix in the triple dump format used by golden tests."""
    m = canonicalize(m)
    coo = m.tocoo()
    fh.write(f"{m.shape[0]} {m.shape[1]} {m.nnz}\n")
    order = np.lexsort((coo.col, coo.row))
    is_int = np.issubdtype(m.dtype, np.integer)
    for k in order:
        v = coo.data[k]
        val = str(int(v)) if is_int else f"{float(v):.17g}"
        fh.write(f"{coo.row[k]} {coo.col[k]} {val}\n")


def load_matrix(fh: TextIO) -> sp.csr_array:
    """Read a matrix from the triple dump format."""
    header = fh.readline().split()
    if len(header) != 3:
        raise ValueError(f"bad matrix dump header: {header!r}")
    rows, cols, nnz = (int(x) for x in header)
    ii, jj, vv = [], [], []
    is_int = True
    for _ in range(nnz):
        parts = fh.readline().split()
        if len(parts) != 3:
            raise ValueError("truncated matrix dump")
        ii.append(int(parts[0]))
        jj.append(int(parts[1]))
        vv.append(parts[2])
        try:
            int(parts[2])
        except ValueError:
            is_int = False
    if is_int:
        data = np.array([int(v) for v in vv], dtype=np.int64)
    else:
        data = np.array([float(v) for v in vv], dtype=np.float64)
    return canonicalize(
        sp.csr_array((data, (np.array(ii, dtype=np.int64), np.array(jj, dtype=np.int64))),
                     shape=(rows, cols))
    )
