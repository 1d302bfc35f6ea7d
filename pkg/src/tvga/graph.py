"""Undirected graph model, dataset ingestion and edge splitting.

Graphs are stored in canonical CSR form (sorted neighbor rows, no self-loops,
symmetric) and are always connected: construction keeps the largest
connected component.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

log = logging.getLogger(__name__)


class GraphFormatError(ValueError):
    """A malformed line in one of the input files."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class ReferentialError(ValueError):
    """A node referenced by the feature or label file is not in the edge file."""


class InfeasibleSplitError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    n_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray | sp.csr_matrix | None = None
    labels: np.ndarray | None = None
    node_ids: tuple[str, ...] | None = None
    _edge_keys: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        src = np.repeat(np.arange(self.n_nodes, dtype=np.int64), np.diff(self.indptr))
        # sorted because rows are sorted and row ids increase
        object.__setattr__(self, "_edge_keys", src * self.n_nodes + self.indices)
        for arr in (self.indptr, self.indices):
            arr.setflags(write=False)

    @classmethod
    def from_edges(cls, n_nodes, edges, features=None, labels=None, node_ids=None,
                   largest_component=True):
        """Build a canonical graph from an (E, 2) array of node pairs.

        Self-loops are dropped and duplicate/reversed pairs merged. With
        ``largest_component`` the result is restricted to the largest
        connected component and nodes are renumbered in increasing order of
        their old ids; features, labels and node_ids follow the renumbering.
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        edges = edges[edges[:, 0] != edges[:, 1]]
        adj = sp.coo_matrix(
            (np.ones(2 * len(edges)), (np.r_[edges[:, 0], edges[:, 1]], np.r_[edges[:, 1], edges[:, 0]])),
            shape=(n_nodes, n_nodes),
        ).tocsr()
        adj.sum_duplicates()
        adj.data[:] = 1.0
        if largest_component and n_nodes > 0:
            _, comp = csgraph.connected_components(adj, directed=False)
            keep = np.flatnonzero(comp == np.bincount(comp).argmax())
            if len(keep) < n_nodes:
                adj = adj[keep][:, keep].tocsr()
                features = None if features is None else features[keep]
                labels = None if labels is None else np.asarray(labels)[keep]
                node_ids = None if node_ids is None else tuple(node_ids[k] for k in keep)
                n_nodes = len(keep)
        adj.sort_indices()
        if sp.issparse(features):
            features = sp.csr_matrix(features, dtype=np.float64)
        elif features is not None:
            features = np.asarray(features, dtype=np.float64)
        return cls(
            n_nodes=n_nodes,
            indptr=adj.indptr.astype(np.int64),
            indices=adj.indices.astype(np.int64),
            features=features,
            labels=None if labels is None else np.asarray(labels, dtype=np.int64),
            node_ids=None if node_ids is None else tuple(str(x) for x in node_ids),
        )

    @property
    def n_edges(self):
        return len(self.indices) // 2

    @property
    def degrees(self):
        return np.diff(self.indptr)

    @property
    def n_features(self):
        return 0 if self.features is None else self.features.shape[1]

    @property
    def n_classes(self):
        return 0 if self.labels is None else int(self.labels.max()) + 1

    def neighbors(self, i):
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def edges(self):
        """Undirected edges as an (E, 2) array with u < v, lexicographically sorted."""
        src = np.repeat(np.arange(self.n_nodes, dtype=np.int64), self.degrees)
        mask = src < self.indices
        return np.column_stack([src[mask], self.indices[mask]])

    def has_edges(self, u, v):
        """Vectorized adjacency test for node arrays ``u`` and ``v``."""
        keys = np.asarray(u, dtype=np.int64) * self.n_nodes + np.asarray(v, dtype=np.int64)
        if len(self._edge_keys) == 0:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.searchsorted(self._edge_keys, keys)
        pos = np.minimum(pos, len(self._edge_keys) - 1)
        return self._edge_keys[pos] == keys

    def has_edge(self, u, v):
        return bool(self.has_edges(np.array([u]), np.array([v]))[0])

    def adjacency(self):
        return sp.csr_matrix(
            (np.ones(len(self.indices)), self.indices, self.indptr),
            shape=(self.n_nodes, self.n_nodes),
        )

    def is_connected(self):
        if self.n_nodes == 0:
            return True
        return csgraph.connected_components(self.adjacency(), directed=False)[0] == 1

    def with_edges(self, edges):
        """Same nodes, features and labels, different edge set (no LCC step)."""
        return Graph.from_edges(
            self.n_nodes, edges, features=self.features, labels=self.labels,
            node_ids=self.node_ids, largest_component=False,
        )


# -- ingestion ---------------------------------------------------------------

def _sort_ids(ids):
    ids = list(ids)
    try:
        return sorted(ids, key=int)
    except ValueError:
        return sorted(ids)


def _read_rows(path, sep="\t"):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line.split(sep)


def read_edge_file(path):
    pairs = []
    for lineno, row in _read_rows(path):
        if len(row) != 2 or not row[0] or not row[1]:
            raise GraphFormatError(path, lineno, f"expected 'src<TAB>dst', got {row!r}")
        pairs.append((row[0].strip(), row[1].strip()))
    return pairs


def _read_features(path, index):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        rows = {}
        for lineno, row in _read_rows(path, sep=","):
            if len(row) < 2:
                raise GraphFormatError(path, lineno, "expected 'node,v1,...,vF'")
            try:
                rows[row[0].strip()] = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise GraphFormatError(path, lineno, str(exc)) from None
        widths = {len(v) for v in rows.values()}
        if len(widths) > 1:
            raise GraphFormatError(path, 0, f"ragged dense feature rows: widths {sorted(widths)}")
        _check_known(path, rows, index)
        x = np.zeros((len(index), widths.pop() if widths else 0))
        for node, vals in rows.items():
            x[index[node]] = vals
        return x

    entries = []
    for lineno, row in _read_rows(path):
        if len(row) != 2:
            raise GraphFormatError(path, lineno, f"expected 'node<TAB>dim', got {row!r}")
        try:
            dim = int(row[1])
        except ValueError:
            raise GraphFormatError(path, lineno, f"feature dimension {row[1]!r} is not an integer") from None
        if dim < 0:
            raise GraphFormatError(path, lineno, "negative feature dimension")
        entries.append((row[0].strip(), dim))
    _check_known(path, {n for n, _ in entries}, index)
    n_dims = max((d for _, d in entries), default=-1) + 1
    rows = np.array([index[n] for n, _ in entries], dtype=np.int64)
    cols = np.array([d for _, d in entries], dtype=np.int64)
    x = sp.coo_matrix((np.ones(len(entries)), (rows, cols)), shape=(len(index), n_dims)).tocsr()
    x.sum_duplicates()
    x.data[:] = 1.0
    return x


def _check_known(path, nodes, index):
    missing = [n for n in nodes if n not in index]
    if missing:
        raise ReferentialError(
            f"{path}: {len(missing)} node id(s) not present in the edge file, e.g. {missing[:5]}"
        )


def load_graph(edge_file, feature_file=None, label_file=None):
    """Load an undirected graph and keep its largest connected component.

    ``edge_file`` holds ``src<TAB>dst`` lines. ``feature_file`` is either a
    sparse indicator TSV (``node<TAB>dim``) or a dense ``.csv`` with the node
    id in the first column. ``label_file`` holds ``node<TAB>class`` lines;
    class names are mapped to 0..C-1 in sorted order.
    """
    pairs = read_edge_file(edge_file)
    ids = _sort_ids({n for p in pairs for n in p})
    index = {n: i for i, n in enumerate(ids)}
    edges = np.array([(index[a], index[b]) for a, b in pairs], dtype=np.int64).reshape(-1, 2)

    features = None
    if feature_file is not None:
        features = _read_features(feature_file, index)

    labels = None
    if label_file is not None:
        raw = {}
        for lineno, row in _read_rows(label_file):
            if len(row) != 2:
                raise GraphFormatError(label_file, lineno, f"expected 'node<TAB>class', got {row!r}")
            raw[row[0].strip()] = row[1].strip()
        _check_known(label_file, raw, index)
        classes = {c: k for k, c in enumerate(_sort_ids(set(raw.values())))}
        labels = np.full(len(ids), -1, dtype=np.int64)
        for node, c in raw.items():
            labels[index[node]] = classes[c]

    g = Graph.from_edges(len(ids), edges, features=features, labels=labels, node_ids=ids)
    if g.labels is not None and (g.labels < 0).any():
        raise ReferentialError(f"{label_file}: {(g.labels < 0).sum()} graph node(s) have no label")
    log.info("loaded %s: %d nodes, %d edges (largest component)", edge_file, g.n_nodes, g.n_edges)
    return g


def write_edge_file(path, edges, node_ids=None):
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in np.asarray(edges).reshape(-1, 2):
            if node_ids is None:
                fh.write(f"{int(u)}\t{int(v)}\n")
            else:
                fh.write(f"{node_ids[u]}\t{node_ids[v]}\n")


def write_id_map(path, g):
    """Sidecar TSV ``new_id<TAB>original_id``."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(g.n_nodes):
            fh.write(f"{i}\t{g.node_ids[i] if g.node_ids else i}\n")


def save_graph(directory, g):
    """Write ``g`` in canonical, already-remapped form."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_edge_file(directory / "edges.tsv", g.edges())
    write_id_map(directory / "id_map.tsv", g)
    if g.features is not None:
        x = sp.csr_matrix(g.features)
        with open(directory / "features.tsv", "w", encoding="utf-8") as fh:
            for i in range(g.n_nodes):
                for d in x.indices[x.indptr[i]:x.indptr[i + 1]]:
                    fh.write(f"{i}\t{d}\n")
        if not np.all(x.data == 1.0):
            raise ValueError("canonical feature TSV only stores boolean indicators")
        (directory / "features.meta.json").write_text(json.dumps({"n_features": x.shape[1]}))
    if g.labels is not None:
        with open(directory / "labels.tsv", "w", encoding="utf-8") as fh:
            for i, c in enumerate(g.labels):
                fh.write(f"{i}\t{int(c)}\n")


def load_saved_graph(directory):
    directory = Path(directory)
    feats = directory / "features.tsv"
    labels = directory / "labels.tsv"
    g = load_graph(directory / "edges.tsv", feats if feats.exists() else None,
                   labels if labels.exists() else None)
    meta = directory / "features.meta.json"
    if g.features is not None and meta.exists():
        width = json.loads(meta.read_text())["n_features"]
        if g.features.shape[1] < width:
            x = sp.csr_matrix(g.features)
            x.resize((g.n_nodes, width))
            g = Graph.from_edges(g.n_nodes, g.edges(), features=x, labels=g.labels,
                                 node_ids=g.node_ids, largest_component=False)
    id_map = directory / "id_map.tsv"
    if id_map.exists():
        original = [row[1] for _, row in _read_rows(id_map)]
        if len(original) == g.n_nodes:
            object.__setattr__(g, "node_ids", tuple(original))
    return g


def load_linqs(directory, name):
    """Read the raw LINQS ``<name>.cites`` / ``<name>.content`` pair.

    Returns a graph over the largest connected component with boolean word
    features and class labels.
    """
    directory = Path(directory)
    content = directory / f"{name}.content"
    ids, vectors, classes = [], [], []
    for lineno, row in _read_rows(content):
        if len(row) < 3:
            raise GraphFormatError(content, lineno, "expected 'paper<TAB>words...<TAB>class'")
        ids.append(row[0])
        vectors.append(np.array(row[1:-1], dtype=np.float64))
        classes.append(row[-1])
    index = {n: i for i, n in enumerate(ids)}
    class_index = {c: k for k, c in enumerate(sorted(set(classes)))}
    edges = []
    cites = directory / f"{name}.cites"
    for lineno, row in _read_rows(cites):
        if len(row) != 2:
            raise GraphFormatError(cites, lineno, "expected 'cited<TAB>citing'")
        a, b = row[0].strip(), row[1].strip()
        if a in index and b in index:
            edges.append((index[a], index[b]))
    return Graph.from_edges(
        len(ids), np.array(edges), features=sp.csr_matrix(np.vstack(vectors)),
        labels=np.array([class_index[c] for c in classes]), node_ids=ids,
    )


# -- derived quantities ------------------------------------------------------

def normalize_adjacency(g):
    """Symmetric GCN propagation matrix D^-1/2 (A + I) D^-1/2 as scipy CSR."""
    a_tilde = g.adjacency() + sp.identity(g.n_nodes, format="csr")
    d_inv_sqrt = 1.0 / np.sqrt(np.asarray(a_tilde.sum(axis=1)).ravel())
    norm = sp.diags(d_inv_sqrt) @ a_tilde @ sp.diags(d_inv_sqrt)
    norm = sp.csr_matrix(norm)
    norm.sort_indices()
    return norm


def graph_density(g):
    if g.n_nodes < 2:
        raise ValueError("graph density needs at least two nodes")
    n = g.n_nodes
    return 2.0 * g.n_edges / (n * (n - 1))


# -- edge splitting ----------------------------------------------------------

@dataclass(eq=False)
class EdgeSplit:
    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray
    train_graph: Graph

    def to_json(self):
        return {
            name: [[int(u), int(v)] for u, v in getattr(self, name)]
            for name in ("train_pos", "val_pos", "test_pos", "val_neg", "test_neg")
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path, graph):
        """Rebuild a split saved by :meth:`save` for the full graph ``graph``."""
        raw = json.loads(Path(path).read_text())
        arrays = {k: np.array(v, dtype=np.int64).reshape(-1, 2) for k, v in raw.items()}
        return cls(train_graph=graph.with_edges(arrays["train_pos"]), **arrays)


def uniform_spanning_tree(g, rng):
    """Wilson's algorithm: loop-erased random walks give a uniform spanning tree."""
    n = g.n_nodes
    in_tree = np.zeros(n, dtype=bool)
    nxt = np.full(n, -1, dtype=np.int64)
    indptr, indices = g.indptr, g.indices
    deg = g.degrees
    root = int(rng.integers(n))
    in_tree[root] = True
    for start in rng.permutation(n):
        u = int(start)
        while not in_tree[u]:
            nxt[u] = indices[indptr[u] + int(rng.integers(deg[u]))]
            u = int(nxt[u])
        u = int(start)
        while not in_tree[u]:
            in_tree[u] = True
            u = int(nxt[u])
    child = np.flatnonzero(nxt >= 0)
    tree = np.column_stack([child, nxt[child]])
    return np.sort(tree, axis=1)


def _sample_non_edges(g, count, rng, exclude):
    """``count`` distinct uniform non-edges (u < v) not already in ``exclude``."""
    n = g.n_nodes
    out = []
    seen = set(exclude)
    while len(out) < count:
        need = count - len(out)
        u = rng.integers(n, size=2 * need + 8)
        v = rng.integers(n, size=2 * need + 8)
        lo, hi = np.minimum(u, v), np.maximum(u, v)
        ok = (lo != hi) & ~g.has_edges(lo, hi)
        for a, b in zip(lo[ok], hi[ok]):
            key = (int(a), int(b))
            if key not in seen:
                seen.add(key)
                out.append(key)
                if len(out) == count:
                    break
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def split_edges(g, ratios=(0.85, 0.10, 0.05), seed=0):
    """Random train/validation/test split of edges with matched non-edges.

    The training graph stays connected: the edges of a uniform spanning tree
    always go to train, the remaining edges are shuffled and cut by ratio.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    if not g.is_connected():
        raise InfeasibleSplitError("edge split needs a connected graph")
    rng = np.random.default_rng(seed)
    edges = g.edges()
    n_edges = len(edges)
    n_test = int(round(ratios[2] * n_edges))
    n_val = int(round(ratios[1] * n_edges))
    if n_edges - n_val - n_test < g.n_nodes - 1:
        raise InfeasibleSplitError(
            f"{n_edges} edges cannot hold out {n_val + n_test} and keep a spanning tree of "
            f"{g.n_nodes - 1} edges in train"
        )
    n_pairs = g.n_nodes * (g.n_nodes - 1) // 2
    if n_pairs - n_edges < n_val + n_test:
        raise InfeasibleSplitError("not enough non-edges for the negative sets")

    tree = uniform_spanning_tree(g, rng)
    tree_keys = set(map(tuple, tree.tolist()))
    rest = np.array([e for e in edges.tolist() if tuple(e) not in tree_keys], dtype=np.int64).reshape(-1, 2)
    rest = rest[rng.permutation(len(rest))]
    test_pos, val_pos = rest[:n_test], rest[n_test:n_test + n_val]
    train_pos = np.vstack([tree, rest[n_test + n_val:]])
    train_pos = train_pos[np.lexsort((train_pos[:, 1], train_pos[:, 0]))]

    val_neg = _sample_non_edges(g, n_val, rng, exclude=())
    test_neg = _sample_non_edges(g, n_test, rng, exclude=map(tuple, val_neg.tolist()))
    return EdgeSplit(
        train_pos=train_pos, val_pos=val_pos, test_pos=test_pos,
        val_neg=val_neg, test_neg=test_neg, train_graph=g.with_edges(train_pos),
    )
