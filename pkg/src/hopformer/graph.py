"""Graph storage, symmetric normalization and sparse propagation.

Two on-disk formats are understood:

``edges``
    Plain text, one ``u v`` pair per line. ``#`` starts a comment. A comment
    of the form ``# nodes: N`` declares the node count; otherwise it is
    inferred as ``max id + 1``.

``binary``
    ``HOPGRAPH`` magic, a ``<I`` format version, five ``<q`` lengths
    (n, nnz, d, num_classes, has_labels) and then little-endian arrays:
    int64 row offsets, int64 column indices, float64 features (row-major)
    and, when present, int64 labels (``-1`` marks an unlabeled node).
"""
from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import GraphFormatError, ShapeError

GRAPH_MAGIC = b"HOPGRAPH"
GRAPH_VERSION = 1
UNLABELED = -1

_NODES_DIRECTIVE = re.compile(r"^#\s*nodes\s*[:=]\s*(\d+)\s*$", re.IGNORECASE)


@dataclass(frozen=True, eq=False)
class CsrGraph:
    """Undirected, unweighted attributed graph in CSR form.

    Each undirected edge is stored in both directions. ``labels`` holds a
    class id in ``[0, num_classes)`` or ``UNLABELED``.
    """

    n: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    @classmethod
    def from_edges(cls, n, edges, features=None, labels=None, num_classes=None):
        """Build a graph from an iterable or ``(m, 2)`` array of node pairs.

        Reverse edges are added and duplicates removed. Self-loops present in
        the input are kept; :func:`normalize` unifies them.
        """
        n = int(n)
        if n < 1:
            raise GraphFormatError(f"graph needs at least one node, got n={n}")
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            bad = edges[(edges < 0) | (edges >= n)][0]
            raise GraphFormatError(f"node id out of range: {bad} not in [0, {n})")
        both = np.concatenate([edges, edges[:, ::-1]])
        # unique() on row*n+col sorts by (row, col): canonical CSR, deduplicated
        keys = np.unique(both[:, 0] * n + both[:, 1])
        rows, cols = np.divmod(keys, n)
        row_offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=row_offsets[1:])

        if features is None:
            features = np.ones((n, 1))
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 1:
            features = features[:, None]
        if features.shape[0] != n:
            raise GraphFormatError(
                f"feature-row count {features.shape[0]} does not match n={n}")

        if labels is None:
            labels = np.full(n, UNLABELED, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != n:
            raise GraphFormatError(f"label count {labels.shape[0]} does not match n={n}")
        if num_classes is None:
            num_classes = int(labels.max()) + 1 if (labels >= 0).any() else 0
        if ((labels < UNLABELED) | (labels >= num_classes)).any():
            raise GraphFormatError(f"labels must lie in [0, {num_classes}) or be -1")

        return cls(n, row_offsets, cols.astype(np.int64), features, labels, int(num_classes))

    @property
    def d(self):
        return self.features.shape[1]

    @property
    def nnz(self):
        return int(self.row_offsets[-1])

    def edges(self):
        """Return the stored directed entries as an ``(nnz, 2)`` array."""
        rows = np.repeat(np.arange(self.n), np.diff(self.row_offsets))
        return np.stack([rows, self.col_indices], axis=1)

    def neighbors(self, u):
        return self.col_indices[self.row_offsets[u]:self.row_offsets[u + 1]]

    def labeled_mask(self):
        return self.labels != UNLABELED

    def permuted(self, perm):
        """Relabel nodes so that old node ``perm[i]`` becomes new node ``i``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(self.n)
        return CsrGraph.from_edges(self.n, inv[self.edges()], self.features[perm],
                                   self.labels[perm], self.num_classes)

    def check(self):
        """Raise :class:`GraphFormatError` if any structural invariant fails."""
        ro, ci = self.row_offsets, self.col_indices
        if ro.shape != (self.n + 1,) or ro[0] != 0 or (np.diff(ro) < 0).any():
            raise GraphFormatError("row_offsets must be non-decreasing from 0")
        if ro[-1] != ci.shape[0]:
            raise GraphFormatError("row_offsets[n] != len(col_indices)")
        if ci.size and (ci.min() < 0 or ci.max() >= self.n):
            raise GraphFormatError("column index out of range")
        m = self.to_scipy()
        if m.max() > 1:
            raise GraphFormatError("duplicate column index within a row")
        if (m != m.T).nnz:
            raise GraphFormatError("graph is not symmetric")

    def to_scipy(self):
        data = np.ones(self.nnz)
        return sp.csr_matrix((data, self.col_indices, self.row_offsets), shape=(self.n, self.n))


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """``D^-1/2 (A + I) D^-1/2`` stored as CSR with one weight per entry."""

    n: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    weights: np.ndarray
    _csr: sp.csr_matrix = field(repr=False)

    def to_dense(self):
        return self._csr.toarray()

    def to_scipy(self):
        return self._csr


def normalize(g: CsrGraph) -> NormalizedAdjacency:
    """Insert one self-loop per node and apply symmetric degree normalization."""
    e = g.edges()
    e = e[e[:, 0] != e[:, 1]]
    loops = np.repeat(np.arange(g.n, dtype=np.int64)[:, None], 2, axis=1)
    # from_edges sorts and dedups, giving the same CSR however often this runs
    s = CsrGraph.from_edges(g.n, np.concatenate([e, loops]), features=np.zeros((g.n, 0)))
    deg = np.diff(s.row_offsets).astype(np.float64)
    rows = np.repeat(np.arange(g.n), np.diff(s.row_offsets))
    w = 1.0 / np.sqrt(deg[rows] * deg[s.col_indices])
    csr = sp.csr_matrix((w, s.col_indices, s.row_offsets), shape=(g.n, g.n))
    return NormalizedAdjacency(g.n, s.row_offsets, s.col_indices, w, csr)


def spmm(a: NormalizedAdjacency, m, canonical=False) -> np.ndarray:
    """Return ``a @ m`` in float64.

    Each output row is accumulated over that row's entries in CSR order, so
    results are reproducible run to run. With ``canonical`` every output
    entry instead sums its terms in ascending order of value; the result then
    depends only on the multiset of terms, so relabeling the nodes permutes
    the output bitwise. This costs a sort of ``nnz * d`` values.
    """
    m = np.asarray(m)
    if m.ndim not in (1, 2) or m.shape[0] != a.n:
        raise ShapeError(f"spmm: adjacency is {a.n}x{a.n} but matrix has shape {m.shape}")
    m = m.astype(np.float64, copy=False)
    if not canonical:
        return np.asarray(a.to_scipy() @ m)
    flat = m.ndim == 1
    m2 = m[:, None] if flat else m
    d = m2.shape[1]
    if a.n == 0 or d == 0:
        return np.zeros(m.shape)
    deg = np.diff(a.row_offsets)
    rows = np.repeat(np.arange(a.n), deg)
    terms = (a.weights[:, None] * m2[a.col_indices]).ravel()
    segment = (rows[:, None] * d + np.arange(d)).ravel()
    terms = terms[np.lexsort((terms, segment))]
    # self-loops guarantee every (row, column) segment is non-empty
    counts = np.repeat(deg, d)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    out = np.add.reduceat(terms, starts).reshape(a.n, d)
    return out[:, 0] if flat else out


def _parse_edge_list(path):
    declared_n = None
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            directive = _NODES_DIRECTIVE.match(line)
            if directive:
                declared_n = int(directive.group(1))
                continue
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphFormatError(f"{path}:{lineno}: malformed line, expected 'u v': {raw.rstrip()!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: malformed line, non-integer node id: {raw.rstrip()!r}") from None
            if u < 0 or v < 0:
                raise GraphFormatError(f"{path}:{lineno}: node id out of range: negative id")
            pairs.append((u, v))
    return declared_n, np.array(pairs, dtype=np.int64).reshape(-1, 2)


def _read_array(fh, dtype, count, what):
    arr = np.fromfile(fh, dtype=dtype, count=count)
    if arr.shape[0] != count:
        raise GraphFormatError(f"truncated binary graph: short read in {what}")
    return arr


def load_graph(path, format="edges", n=None, features=None, labels=None, num_classes=None):
    """Read a graph from ``path``.

    For the ``edges`` format, ``features``/``labels`` supply node attributes
    (defaulting to a single all-ones feature column and no labels). The
    ``binary`` format carries its own attributes.
    """
    path = Path(path)
    if not path.exists():
        raise GraphFormatError(f"graph file not found: {path}")
    if format == "edges":
        declared, pairs = _parse_edge_list(path)
        if n is None:
            n = declared
        if n is None:
            n = int(pairs.max()) + 1 if pairs.size else 0
        if pairs.size and pairs.max() >= n:
            raise GraphFormatError(f"node id out of range: {int(pairs.max())} on a graph with n={n}")
        return CsrGraph.from_edges(n, pairs, features, labels, num_classes)
    if format == "binary":
        return _load_binary(path)
    raise GraphFormatError(f"unknown graph format {format!r} (expected 'edges' or 'binary')")


def _load_binary(path):
    with open(path, "rb") as fh:
        if fh.read(len(GRAPH_MAGIC)) != GRAPH_MAGIC:
            raise GraphFormatError(f"{path}: not a binary graph file (bad magic)")
        head = fh.read(4 + 5 * 8)
        if len(head) != 44:
            raise GraphFormatError(f"{path}: truncated header")
        version, n, nnz, d, c, has_labels = struct.unpack("<Iqqqqq", head)
        if version != GRAPH_VERSION:
            raise GraphFormatError(f"{path}: unsupported graph format version {version}")
        ro = _read_array(fh, "<i8", n + 1, "row_offsets")
        ci = _read_array(fh, "<i8", nnz, "col_indices")
        x = _read_array(fh, "<f8", n * d, "features").reshape(n, d)
        y = _read_array(fh, "<i8", n, "labels") if has_labels else None
    if ro[0] != 0 or ro[-1] != nnz or (np.diff(ro) < 0).any():
        raise GraphFormatError(f"{path}: inconsistent row offsets")
    rows = np.repeat(np.arange(n), np.diff(ro))
    return CsrGraph.from_edges(n, np.stack([rows, ci], axis=1), x, y, c if has_labels else None)


def save_graph(g: CsrGraph, path):
    """Write ``g`` in the binary format."""
    with open(path, "wb") as fh:
        fh.write(GRAPH_MAGIC)
        fh.write(struct.pack("<Iqqqqq", GRAPH_VERSION, g.n, g.nnz, g.d, g.num_classes, 1))
        fh.write(g.row_offsets.astype("<i8").tobytes())
        fh.write(g.col_indices.astype("<i8").tobytes())
        fh.write(np.ascontiguousarray(g.features, dtype="<f8").tobytes())
        fh.write(g.labels.astype("<i8").tobytes())
