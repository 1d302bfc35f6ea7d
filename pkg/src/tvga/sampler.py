"""Balanced triad sampling.

A triad (i, j, k) is drawn by picking i uniformly, then j from N(i) with
probability p (otherwise uniformly among the non-neighbours of i), then k
from N(j) with probability p (otherwise among the non-neighbours of j).
The probability p is chosen so that a triad carries 3/2 edges on average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import graph_density


# pair slots of a triad (i, j, k): ij, ik, jk
SLOTS = ((0, 1), (0, 2), (1, 2))


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class SamplingConfig:
    p: float
    batch_size: int = 5000

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class TriadBatch:
    """B sampled triads and the distinct node pairs they cover.

    ``slot_pair[b, s]`` indexes into ``pairs`` for slot s in (ij, ik, jk)
    of triad b. ``multiplicity`` counts the slots per pair and
    ``indicator`` says whether the pair is an edge of the sampling graph.
    """

    triads: np.ndarray
    pairs: np.ndarray
    slot_pair: np.ndarray
    multiplicity: np.ndarray
    indicator: np.ndarray

    @property
    def size(self):
        return len(self.triads)

    @property
    def n_pairs(self):
        return len(self.pairs)

    def edge_fraction(self):
        """Share of the 3B pair slots that are existing edges."""
        return float(self.indicator[self.slot_pair].mean())


def triangles_per_node(g):
    a = g.adjacency()
    return np.asarray((a @ a).multiply(a).sum(axis=1)).ravel() / 2.0


def clustering_coefficient(g, kind="mean_local"):
    """Mean local clustering (nodes of degree < 2 count as 0) or global transitivity."""
    if g.n_nodes < 3:
        raise ValueError("clustering coefficient needs at least three nodes")
    tri = triangles_per_node(g)
    deg = g.degrees.astype(np.float64)
    wedges = deg * (deg - 1.0) / 2.0
    if kind == "mean_local":
        local = np.divide(tri, wedges, out=np.zeros_like(tri), where=wedges > 0)
        return float(local.mean())
    if kind == "global":
        total = wedges.sum()
        return float(tri.sum() / total) if total > 0 else 0.0
    raise ValueError(f"unknown clustering kind {kind!r}")


def expected_edges_per_triad(p, clust, density):
    return 2.0 * p + p * p * clust + (1.0 - p * p) * density


def solve_balance_p(clust, density):
    """Root in (0, 1) of 2p + p^2 clust + (1 - p^2) density = 3/2."""
    if not (0.0 <= clust <= 1.0 and 0.0 <= density <= 1.0):
        raise SamplingError(f"clustering {clust} and density {density} must lie in [0, 1]")
    a, b, c = clust - density, 2.0, density - 1.5
    if abs(a) < 1e-15:
        roots = [-c / b]
    else:
        disc = b * b - 4.0 * a * c
        if disc < 0:
            raise SamplingError("balance equation has no real root")
        sq = math.sqrt(disc)
        # numerically stable pair of roots
        q = -0.5 * (b + math.copysign(sq, b))
        roots = [q / a, c / q]
    inside = [r for r in roots if 0.0 < r < 1.0]
    if not inside:
        raise SamplingError(f"no balancing p in (0, 1) for clustering={clust}, density={density}")
    return min(inside)


def balance_p_for_graph(g, kind="mean_local"):
    return solve_balance_p(clustering_coefficient(g, kind), graph_density(g))


def _draw_neighbors(g, nodes, rng, avoid=None):
    """Uniform neighbour of each node, redrawing hits on ``avoid``.

    Rows whose only neighbour is the avoided node get -1.
    """
    deg = g.degrees[nodes]
    out = np.full(len(nodes), -1, dtype=np.int64)
    todo = np.arange(len(nodes))
    if avoid is not None:
        only = (deg == 1) & (g.indices[g.indptr[nodes]] == avoid)
        todo = todo[~only & (deg > 0)]
    else:
        todo = todo[deg > 0]
    while len(todo):
        pick = g.indices[g.indptr[nodes[todo]] + (rng.random(len(todo)) * deg[todo]).astype(np.int64)]
        ok = np.ones(len(todo), dtype=bool) if avoid is None else pick != avoid[todo]
        out[todo[ok]] = pick[ok]
        todo = todo[~ok]
    return out


def _draw_non_neighbors(g, nodes, rng, avoid=None):
    """Uniform node outside N(v) and {v} for each v, redrawing hits on ``avoid``.

    Rows with no admissible node get -1.
    """
    n = g.n_nodes
    deg = g.degrees[nodes]
    support = n - 1 - deg
    if avoid is not None:
        avoid_ok = (avoid != nodes) & ~g.has_edges(nodes, avoid)
        support = support - avoid_ok
    out = np.full(len(nodes), -1, dtype=np.int64)
    todo = np.flatnonzero(support > 0)
    while len(todo):
        cand = rng.integers(n, size=len(todo))
        ok = (cand != nodes[todo]) & ~g.has_edges(nodes[todo], cand)
        if avoid is not None:
            ok &= cand != avoid[todo]
        out[todo[ok]] = cand[ok]
        todo = todo[~ok]
    return out


def _draw_step(g, nodes, p, rng, avoid=None):
    near = rng.random(len(nodes)) < p
    out = np.empty(len(nodes), dtype=np.int64)
    out[near] = _draw_neighbors(g, nodes[near], rng, None if avoid is None else avoid[near])
    out[~near] = _draw_non_neighbors(g, nodes[~near], rng, None if avoid is None else avoid[~near])
    # empty branch support: take the other branch
    lost_near = np.flatnonzero(near & (out < 0))
    lost_far = np.flatnonzero(~near & (out < 0))
    if len(lost_near):
        out[lost_near] = _draw_non_neighbors(g, nodes[lost_near], rng, None if avoid is None else avoid[lost_near])
    if len(lost_far):
        out[lost_far] = _draw_neighbors(g, nodes[lost_far], rng, None if avoid is None else avoid[lost_far])
    if (out < 0).any():
        raise SamplingError("graph too small to draw a triad of distinct nodes")
    return out


def sample_triads(g, p, n, rng):
    """``n`` ordered triads as an (n, 3) array of distinct node ids."""
    if g.n_nodes < 3:
        raise SamplingError("triad sampling needs at least three nodes")
    i = rng.integers(g.n_nodes, size=n)
    j = _draw_step(g, i, p, rng)
    k = _draw_step(g, j, p, rng, avoid=i)
    return np.column_stack([i, j, k])


def sample_triad(g, p, rng):
    return tuple(int(v) for v in sample_triads(g, p, 1, rng)[0])


def tabulate(g, triads):
    """Group the 3B pair slots of ``triads`` into distinct unordered pairs."""
    triads = np.asarray(triads, dtype=np.int64).reshape(-1, 3)
    a = np.stack([triads[:, s] for s, _ in SLOTS], axis=1)
    b = np.stack([triads[:, t] for _, t in SLOTS], axis=1)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    keys = (lo * g.n_nodes + hi).reshape(-1)
    uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    pairs = np.column_stack([uniq // g.n_nodes, uniq % g.n_nodes])
    return TriadBatch(
        triads=triads,
        pairs=pairs,
        slot_pair=inverse.reshape(-1, 3),
        multiplicity=counts,
        indicator=g.has_edges(pairs[:, 0], pairs[:, 1]).astype(np.float64),
    )


def sample_batch(g, config, rng):
    return tabulate(g, sample_triads(g, config.p, config.batch_size, rng))
