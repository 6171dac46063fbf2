"""Synthetic graphs for tests, benchmarks and the CLI demo."""
from __future__ import annotations

import numpy as np

from .graph import CsrGraph
from .rng import make_rng


def _bernoulli_pairs(rng, rows, cols, p, same):
    """Sample each (r, c) pair with probability p; ``same`` keeps only r < c."""
    if p <= 0 or rows.size == 0 or cols.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    hit = rng.random((rows.size, cols.size)) < p
    r, c = np.nonzero(hit)
    pairs = np.stack([rows[r], cols[c]], axis=1)
    if same:
        pairs = pairs[pairs[:, 0] < pairs[:, 1]]
    return pairs


def sbm(n=400, blocks=2, p_in=0.1, p_out=0.005, noise=1.0, d=None, seed=0):
    """Stochastic block model with noisy one-hot class features.

    Node ``v`` belongs to block ``v * blocks // n``. Its features are the
    one-hot block indicator (padded to ``d`` columns) plus Gaussian noise of
    standard deviation ``noise``.
    """
    rng = make_rng(seed, "sbm")
    labels = (np.arange(n) * blocks) // n
    members = [np.flatnonzero(labels == b) for b in range(blocks)]
    edges = []
    for i in range(blocks):
        edges.append(_bernoulli_pairs(rng, members[i], members[i], p_in, True))
        for j in range(i + 1, blocks):
            edges.append(_bernoulli_pairs(rng, members[i], members[j], p_out, False))
    d = blocks if d is None else d
    x = np.zeros((n, d))
    x[np.arange(n), labels] = 1.0
    x += noise * rng.standard_normal((n, d))
    return CsrGraph.from_edges(n, np.concatenate(edges), x, labels, blocks)


def random_graph(n, avg_degree=4.0, d=8, num_classes=3, seed=0):
    """Sparse random graph (ring plus uniform chords) with Gaussian features."""
    rng = make_rng(seed, "random_graph")
    ring = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1)
    extra = max(0, int(n * (avg_degree - 2) / 2))
    chords = rng.integers(0, n, size=(extra, 2))
    chords = chords[chords[:, 0] != chords[:, 1]]
    labels = rng.integers(0, num_classes, size=n)
    x = rng.standard_normal((n, d))
    return CsrGraph.from_edges(n, np.concatenate([ring, chords]), x, labels, num_classes)


def erdos_renyi(n, p, d, seed=0, num_classes=2):
    """Small dense-sampled G(n, p) graph, used by the oracle suites."""
    rng = make_rng(seed, "erdos_renyi")
    idx = np.arange(n)
    edges = _bernoulli_pairs(rng, idx, idx, p, True)
    x = rng.standard_normal((n, d))
    labels = rng.integers(0, num_classes, size=n)
    return CsrGraph.from_edges(n, edges, x, labels, num_classes)
