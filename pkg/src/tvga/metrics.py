"""Ranking metrics, clustering metrics and generated-graph statistics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csgraph
from scipy.stats import rankdata
from sklearn import metrics as skm

from .sampler import triangles_per_node


def _binary_inputs(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"{len(scores)} scores but {len(labels)} labels")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return scores, labels.astype(bool)


def roc_auc(scores, labels):
    """P(random positive outranks random negative), ties counting one half."""
    scores, labels = _binary_inputs(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores, labels):
    """Sum over the ranking of (recall step) * precision; ties keep input order."""
    scores, labels = _binary_inputs(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    precision = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(precision[hits].sum() / n_pos)


def munkres_match(confusion):
    """Permutation ``perm`` maximizing ``sum(confusion[r, perm[r]])``.

    Rows are predicted clusters, columns true classes.
    """
    confusion = np.asarray(confusion, dtype=np.float64)
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {confusion.shape}")
    rows, cols = linear_sum_assignment(-confusion)
    perm = np.empty(len(rows), dtype=np.int64)
    perm[rows] = cols
    return perm


@dataclass(frozen=True)
class ClusterMetrics:
    acc: float
    nmi: float
    f1: float
    precision: float
    adj_ri: float

    def to_dict(self):
        return asdict(self)


def confusion_matrix(pred, truth):
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    k = int(max(pred.max(), truth.max())) + 1
    out = np.zeros((k, k), dtype=np.int64)
    np.add.at(out, (pred, truth), 1)
    return out


def cluster_metrics(pred, truth):
    """Accuracy, NMI, macro F1/precision after optimal label matching, and ARI."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError(f"{len(pred)} predictions but {len(truth)} labels")
    conf = confusion_matrix(pred, truth)
    perm = munkres_match(conf)
    mapped = perm[pred]
    classes = np.unique(truth)
    return ClusterMetrics(
        acc=float((mapped == truth).mean()),
        nmi=float(skm.normalized_mutual_info_score(truth, pred, average_method="arithmetic")),
        f1=float(skm.f1_score(truth, mapped, labels=classes, average="macro", zero_division=0)),
        precision=float(skm.precision_score(truth, mapped, labels=classes, average="macro", zero_division=0)),
        adj_ri=float(skm.adjusted_rand_score(truth, pred)),
    )


# -- graph statistics --------------------------------------------------------

STAT_NAMES = (
    "gini", "max_degree", "triangle_count", "assortativity",
    "power_law_exp", "clustering_coeff", "char_path_len",
)


@dataclass(frozen=True)
class GraphStats:
    """Degree and structure statistics used to compare generated graphs.

    ``clustering_coeff`` is 3 * triangles / claws, with claws = sum C(d, 3)
    (the star-based coefficient used in generated-graph benchmarks);
    ``transitivity`` is the wedge-based 3 * triangles / sum C(d, 2).
    """

    gini: float
    max_degree: int
    triangle_count: int
    assortativity: float
    power_law_exp: float
    clustering_coeff: float
    char_path_len: float
    n_nodes: int = 0
    n_edges: int = 0
    assortativity_degenerate: bool = False
    disconnected_pair_fraction: float = 0.0
    transitivity: float = 0.0

    def to_dict(self):
        d = {name: getattr(self, name) for name in STAT_NAMES}
        d.update(
            N=self.n_nodes, E=self.n_edges,
            assortativity_degenerate=self.assortativity_degenerate,
            disconnected_pair_fraction=self.disconnected_pair_fraction,
            transitivity=self.transitivity,
        )
        return d

    def to_json(self, **extra):
        return json.dumps({**self.to_dict(), **extra}, indent=2, sort_keys=False)


def degree_gini(deg):
    """sum_ij |d_i - d_j| / (2 N^2 mean(d)), evaluated from the sorted degrees."""
    d = np.sort(np.asarray(deg, dtype=np.float64))
    n = len(d)
    if n == 0 or d.sum() == 0:
        return 0.0
    # sum_{i<j} (d_j - d_i) over sorted d = sum_k (2k - n + 1) d_k, k from 0
    pair_sum = np.sum((2.0 * np.arange(n) - n + 1.0) * d)
    return float(2.0 * pair_sum / (2.0 * n * n * d.mean()))


def degree_assortativity(g):
    """Pearson correlation of endpoint degrees over both orientations of every edge.

    Returns (value, degenerate); constant degrees give (0.0, True).
    """
    deg = g.degrees.astype(np.float64)
    src = np.repeat(np.arange(g.n_nodes), g.degrees)
    x, y = deg[src], deg[g.indices]
    if len(x) == 0 or x.std() == 0 or y.std() == 0:
        return 0.0, True
    return float(np.corrcoef(x, y)[0, 1]), False


def power_law_exponent(deg, d_min=1):
    """Continuous maximum-likelihood exponent 1 + n / sum(ln(d / d_min)) over degrees >= d_min."""
    d = np.asarray(deg, dtype=np.float64)
    d = d[d >= d_min]
    log_sum = np.sum(np.log(d / d_min))
    if len(d) == 0 or log_sum == 0:
        return float("nan")
    return float(1.0 + len(d) / log_sum)


def char_path_length(g):
    """Mean shortest-path length over connected ordered pairs, and the disconnected share."""
    n = g.n_nodes
    if n < 2:
        return 0.0, 0.0
    total, count = 0.0, 0
    block = max(1, 2_000_000 // n)
    adj = g.adjacency()
    for start in range(0, n, block):
        dist = csgraph.shortest_path(adj, method="D", unweighted=True, directed=False,
                                     indices=np.arange(start, min(n, start + block)))
        finite = np.isfinite(dist) & (dist > 0)
        total += dist[finite].sum()
        count += int(finite.sum())
    mean = total / count if count else 0.0
    return float(mean), float(1.0 - count / (n * (n - 1)))


def graph_stats(g):
    if g.n_nodes == 0:
        raise ValueError("graph statistics need a non-empty graph")
    deg = g.degrees
    tri_node = triangles_per_node(g)
    triangles = int(round(tri_node.sum() / 3.0))
    d = deg.astype(np.float64)
    wedges = float(np.sum(d * (d - 1) / 2.0))
    claws = float(np.sum(d * (d - 1) * (d - 2) / 6.0))
    assort, degenerate = degree_assortativity(g)
    cpl, disconnected = char_path_length(g)
    return GraphStats(
        gini=degree_gini(deg),
        max_degree=int(deg.max()),
        triangle_count=triangles,
        assortativity=assort,
        power_law_exp=power_law_exponent(deg),
        clustering_coeff=3.0 * triangles / claws if claws else 0.0,
        char_path_len=cpl,
        n_nodes=g.n_nodes,
        n_edges=g.n_edges,
        assortativity_degenerate=degenerate,
        disconnected_pair_fraction=disconnected,
        transitivity=3.0 * triangles / wedges if wedges else 0.0,
    )
