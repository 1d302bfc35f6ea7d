"""Inference with a trained model: link scores, node clustering, graph generation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import decoder
from .graph import Graph

log = logging.getLogger(__name__)


# -- link prediction ---------------------------------------------------------

def link_triads(pairs, g):
    """Triads (i, j, k), k in N(i) | N(j) minus {i, j}, for every pair (i < j).

    Returns the (T, 3) triad array and, per triad, the row of its pair.
    """
    triads, owner = [], []
    for row, (i, j) in enumerate(pairs):
        ks = np.union1d(g.neighbors(i), g.neighbors(j))
        ks = ks[(ks != i) & (ks != j)]
        triads.append(np.column_stack([np.full(len(ks), i), np.full(len(ks), j), ks]))
        owner.append(np.full(len(ks), row))
    if not triads:
        return np.zeros((0, 3), dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.vstack(triads).astype(np.int64), np.concatenate(owner).astype(np.int64)


def _ordered_pairs(pairs, n_nodes):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) and (pairs.min() < 0 or pairs.max() >= n_nodes):
        raise IndexError(f"node id out of range [0, {n_nodes})")
    if (pairs[:, 0] == pairs[:, 1]).any():
        raise ValueError("link prediction needs two distinct nodes")
    return np.sort(pairs, axis=1)


def predict_links(pairs, z, g, store):
    """Edge probability for each pair, averaged over triads with the pair's neighbours.

    Pairs are evaluated with the smaller id first. A pair without any
    candidate third node falls back to sigmoid(z_i . z_j).
    """
    z = np.asarray(getattr(z, "value", z))
    pairs = _ordered_pairs(pairs, g.n_nodes)
    triads, owner = link_triads(pairs, g)
    out = decoder.decode_inner_product(z[pairs[:, 0]], z[pairs[:, 1]]).value.copy()
    if len(triads):
        e_ij = decoder.decode_triads(z[triads[:, 0]], z[triads[:, 1]], z[triads[:, 2]], store).value[:, 0]
        counts = np.bincount(owner, minlength=len(pairs))
        sums = np.bincount(owner, weights=e_ij, minlength=len(pairs))
        has = counts > 0
        out[has] = sums[has] / counts[has]
    return out


def predict_link(i, j, z, g, store):
    return float(predict_links([[i, j]], z, g, store)[0])


def predict_links_inner(pairs, z, n_nodes):
    z = np.asarray(getattr(z, "value", z))
    pairs = _ordered_pairs(pairs, n_nodes)
    return decoder.decode_inner_product(z[pairs[:, 0]], z[pairs[:, 1]]).value


# -- clustering --------------------------------------------------------------

def _sq_dists(x, centers):
    d = (x * x).sum(1)[:, None] - 2.0 * x @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_plus_plus(x, k, rng):
    n = len(x)
    centers = [x[rng.integers(n)]]
    closest = _sq_dists(x, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        idx = rng.integers(n) if total <= 0 else int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
        idx = min(idx, n - 1)
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx][None, :])[:, 0])
    return np.array(centers)


def lloyd(x, centers, max_iter=300):
    labels = None
    for _ in range(max_iter):
        d = _sq_dists(x, centers)
        new = d.argmin(1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(len(centers)):
            members = x[labels == c]
            if len(members):
                centers[c] = members.mean(0)
            else:
                # empty cluster: move it to the worst-served point
                far = d[np.arange(len(x)), labels].argmax()
                centers[c] = x[far]
    d = _sq_dists(x, centers)
    labels = d.argmin(1)
    sse = float(((x - centers[labels]) ** 2).sum())
    return labels, centers, sse


def kmeans(x, k, restarts, rng):
    """Best of ``restarts`` k-means++ seeded Lloyd runs by within-cluster SSE.

    Returns (labels, sse).
    """
    x = np.asarray(getattr(x, "value", x), dtype=np.float64)
    if k < 2:
        raise ValueError("k-means needs k >= 2")
    if k > len(x):
        raise ValueError(f"k={k} exceeds the number of points {len(x)}")
    best = None
    for _ in range(max(1, restarts)):
        labels, _, sse = lloyd(x, kmeans_plus_plus(x, k, rng))
        if best is None or sse < best[1]:
            best = (labels, sse)
    return best


def cluster_nodes(z, k, restarts, rng):
    return kmeans(z, k, restarts, rng)[0]


# -- graph generation --------------------------------------------------------

@dataclass(frozen=True)
class GenerationConfig:
    n_nodes: int
    target_edges: int
    n_triads: int | None = None
    latent_source: str = "node_posteriors"

    def __post_init__(self):
        if self.n_nodes < 3:
            raise ValueError("generation needs at least three nodes")
        if self.n_triads is not None and self.n_triads < 1:
            raise ValueError("n_triads must be positive")
        if self.target_edges < self.n_nodes - 1:
            raise ValueError("target_edges must be at least n_nodes - 1")
        if self.target_edges > self.n_nodes * (self.n_nodes - 1) // 2:
            raise ValueError("target_edges exceeds the number of node pairs")
        if self.latent_source not in ("node_posteriors", "prior"):
            raise ValueError(f"unknown latent source {self.latent_source!r}")

    @property
    def triads(self):
        return self.n_triads if self.n_triads is not None else 50 * self.n_nodes


@dataclass
class GeneratedGraph:
    graph: Graph
    scores: np.ndarray


def sample_latents(mu, logsig, n, source, rng):
    mu, logsig = np.asarray(mu), np.asarray(logsig)
    if source == "prior":
        return rng.standard_normal((n, mu.shape[1]))
    nodes = rng.choice(len(mu), size=n, replace=n > len(mu))
    return mu[nodes] + np.exp(logsig[nodes]) * rng.standard_normal((n, mu.shape[1]))


def random_distinct_triads(n_nodes, count, rng):
    triads = rng.integers(n_nodes, size=(count, 3))
    while True:
        bad = np.flatnonzero((triads[:, 0] == triads[:, 1]) | (triads[:, 0] == triads[:, 2])
                             | (triads[:, 1] == triads[:, 2]))
        if not len(bad):
            return triads
        triads[bad] = rng.integers(n_nodes, size=(len(bad), 3))


def score_matrix(z, triads, store, chunk=50_000):
    """Dense symmetric score matrix from decoded triads.

    Each ordered slot (a, b) of a triad contributes its probability to
    entry (a, b); entries are averaged over their contributions, entries
    never hit stay 0, and the result is symmetrized as (S + S^T) / 2.
    """
    n = len(z)
    sums = np.zeros(n * n)
    counts = np.zeros(n * n)
    for start in range(0, len(triads), chunk):
        t = triads[start:start + chunk]
        probs = decoder.decode_triads(z[t[:, 0]], z[t[:, 1]], z[t[:, 2]], store).value
        for s, (a, b) in enumerate(decoder.SLOTS):
            keys = t[:, a] * n + t[:, b]
            sums += np.bincount(keys, weights=probs[:, s], minlength=n * n)
            counts += np.bincount(keys, minlength=n * n)
    scores = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0).reshape(n, n)
    return (scores + scores.T) / 2.0


def assemble_edges(scores, target_edges, rng):
    """Turn a symmetric score matrix into exactly ``target_edges`` undirected edges.

    Every node first draws one incident edge with probability proportional
    to its score row; the remaining budget is filled with the highest
    scoring pairs not yet present.
    """
    n = len(scores)
    chosen = set()
    col_totals = scores.sum(0)
    for i in range(n):
        row = scores[i].copy()
        row[i] = 0.0
        total = row.sum()
        if total > 0:
            j = int(np.searchsorted(np.cumsum(row), rng.random() * total, side="right"))
            j = min(j, n - 1)
            while row[j] == 0:
                j -= 1
        else:
            ranked = np.argsort(-col_totals, kind="stable")
            j = int(ranked[0] if ranked[0] != i else ranked[1])
            log.warning("node %d has an all-zero score row; linked to node %d", i, j)
        chosen.add((min(i, j), max(i, j)))
    if len(chosen) > target_edges:
        raise ValueError(f"{len(chosen)} edges needed to cover every node exceed target {target_edges}")

    iu, ju = np.triu_indices(n, k=1)
    order = np.argsort(-scores[iu, ju], kind="stable")
    edges = sorted(chosen)
    need = target_edges - len(edges)
    for idx in order:
        if need == 0:
            break
        key = (int(iu[idx]), int(ju[idx]))
        if key not in chosen:
            chosen.add(key)
            edges.append(key)
            need -= 1
    return np.array(sorted(edges), dtype=np.int64)


def generate_graph(store, embedding, config, rng):
    """Sample a new graph from a trained variational triad model.

    ``embedding`` must carry ``mu`` and ``logsig`` (variational encoder).
    """
    if getattr(embedding, "mu", None) is None or getattr(embedding, "logsig", None) is None:
        raise ValueError("graph generation needs a variational model (mu and logsig)")
    mu = np.asarray(getattr(embedding.mu, "value", embedding.mu))
    logsig = np.asarray(getattr(embedding.logsig, "value", embedding.logsig))
    z = sample_latents(mu, logsig, config.n_nodes, config.latent_source, rng)
    triads = random_distinct_triads(config.n_nodes, config.triads, rng)
    scores = score_matrix(z, triads, store)
    edges = assemble_edges(scores, config.target_edges, rng)
    graph = Graph.from_edges(config.n_nodes, edges, largest_component=False)
    return GeneratedGraph(graph=graph, scores=scores)
