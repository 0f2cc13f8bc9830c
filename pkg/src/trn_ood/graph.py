"""Graph-with-embeddings data model and adjacency normalizations.

A `TrnGraph` is the immutable universe every shift generator transforms:
node features from a text encoder, an undirected simple edge set, integer
class labels, and optionally the raw texts and publication years.

Storage is float32 for features; the normalization helpers return float64
sparse matrices because they feed score propagation and test oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Raised when graph components violate the data-model invariants."""


def canonical_edges(edges: np.ndarray, n: int) -> tuple[np.ndarray, int]:
    """Normalize an edge array to unique (i, j) rows with i < j.

    Self-loops are dropped; the count of dropped loops is returned so
    ingest code can report it. Duplicate pairs (in either orientation)
    collapse to one row. Output is lexicographically sorted, dtype uint32.
    """
    edges = np.asarray(edges)
    if edges.size == 0:
        return np.zeros((0, 2), dtype=np.uint32), 0
    if edges.ndim != 2 or edges.shape[1] != 2:
        raise GraphError(f"edge array must have shape [m, 2], got {edges.shape}")
    e = edges.astype(np.int64)
    if e.min() < 0 or e.max() >= n:
        raise GraphError(f"edge endpoint out of range [0, {n})")
    loops = int(np.sum(e[:, 0] == e[:, 1]))
    e = e[e[:, 0] != e[:, 1]]
    lo = np.minimum(e[:, 0], e[:, 1])
    hi = np.maximum(e[:, 0], e[:, 1])
    codes = np.unique(lo * np.int64(n) + hi)
    out = np.stack([codes // n, codes % n], axis=1).astype(np.uint32)
    return out, loops


@dataclass(frozen=True)
class TrnGraph:
    """Text-rich network: features [n, d], undirected edges, labels in [0, C)."""

    features: np.ndarray
    edges: np.ndarray
    labels: np.ndarray
    num_classes: int
    texts: tuple[str, ...] | None = None
    years: np.ndarray | None = None
    self_loops_dropped: int = field(default=0, compare=False)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def with_features(self, features: np.ndarray, texts=None) -> "TrnGraph":
        g = make_graph(features, self.edges, self.labels, self.num_classes,
                       texts=self.texts if texts is None else texts,
                       years=self.years)
        return g

    def with_edges(self, edges: np.ndarray) -> "TrnGraph":
        return make_graph(self.features, edges, self.labels, self.num_classes,
                          texts=self.texts, years=self.years)

    def subgraph(self, nodes: np.ndarray) -> "TrnGraph":
        """Induced subgraph; `nodes` must be sorted unique original indices."""
        nodes = np.asarray(nodes, dtype=np.int64)
        pos = -np.ones(self.n, dtype=np.int64)
        pos[nodes] = np.arange(nodes.size)
        keep = (pos[self.edges[:, 0].astype(np.int64)] >= 0) & \
               (pos[self.edges[:, 1].astype(np.int64)] >= 0)
        sub_edges = pos[self.edges[keep].astype(np.int64)]
        texts = tuple(self.texts[i] for i in nodes) if self.texts is not None else None
        years = self.years[nodes] if self.years is not None else None
        return make_graph(self.features[nodes], sub_edges, self.labels[nodes],
                          self.num_classes, texts=texts, years=years)


def make_graph(features, edges, labels, num_classes=None, texts=None, years=None) -> TrnGraph:
    """Validate components and build an immutable TrnGraph."""
    features = np.ascontiguousarray(features, dtype=np.float32)
    if features.ndim != 2:
        raise GraphError(f"features must be 2-D, got shape {features.shape}")
    n = features.shape[0]
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise GraphError(f"labels must have shape [{n}], got {labels.shape}")
    edge_arr, loops = canonical_edges(edges, n)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if n else 0
    num_classes = int(num_classes)
    if n and (labels.min() < 0 or labels.max() >= num_classes):
        raise GraphError(f"labels must lie in [0, {num_classes})")
    if texts is not None:
        texts = tuple(str(t) for t in texts)
        if len(texts) != n:
            raise GraphError(f"texts must have length {n}, got {len(texts)}")
    if years is not None:
        years = np.ascontiguousarray(years, dtype=np.int64)
        if years.shape != (n,):
            raise GraphError(f"years must have shape [{n}], got {years.shape}")
        years.setflags(write=False)
    features.setflags(write=False)
    edge_arr.setflags(write=False)
    labels.setflags(write=False)
    return TrnGraph(features=features, edges=edge_arr, labels=labels,
                    num_classes=num_classes, texts=texts, years=years,
                    self_loops_dropped=loops)


def degree_vector(g: TrnGraph) -> np.ndarray:
    """Number of incident edges per node, as float64."""
    deg = np.bincount(g.edges.ravel().astype(np.int64), minlength=g.n)
    return deg.astype(np.float64)


def _adjacency(g: TrnGraph) -> sp.csr_matrix:
    i = g.edges[:, 0].astype(np.int64)
    j = g.edges[:, 1].astype(np.int64)
    rows = np.concatenate([i, j])
    cols = np.concatenate([j, i])
    data = np.ones(rows.size, dtype=np.float64)
    return sp.csr_matrix((data, (rows, cols)), shape=(g.n, g.n))


def sym_norm_adj(g: TrnGraph) -> sp.csr_matrix:
    """D̃^(-1/2) (A + I) D̃^(-1/2) with D̃ the degree of A + I.

    Symmetric by construction: entry (i, j) is 1/sqrt(d_i * d_j), the same
    float both ways round.
    """
    a = _adjacency(g) + sp.identity(g.n, dtype=np.float64, format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    a = a.tocoo()
    data = inv_sqrt[a.row] * inv_sqrt[a.col]
    return sp.csr_matrix((data, (a.row, a.col)), shape=a.shape)


def row_norm_adj(g: TrnGraph) -> sp.csr_matrix:
    """Random-walk matrix D^(-1) A without self-loops.

    Rows of isolated nodes are all-zero; under score propagation such a
    node's score simply decays toward alpha^K times itself.
    """
    a = _adjacency(g)
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = 1.0 / deg[nz]
    a = a.tocoo()
    data = inv[a.row] * a.data
    return sp.csr_matrix((data, (a.row, a.col)), shape=a.shape)


def cosine_similarity_matrix(feats: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity, float64, exactly symmetric.

    Zero rows are defined to have similarity 0 against everything, so
    degenerate embeddings never produce NaNs. Diagonal entries of nonzero
    rows are set to exactly 1.
    """
    x = np.asarray(feats, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    nz = norms > 0
    xn = np.zeros_like(x)
    xn[nz] = x[nz] / norms[nz, None]
    m = xn @ xn.T
    m = (m + m.T) / 2.0
    diag = np.where(nz, 1.0, 0.0)
    np.fill_diagonal(m, diag)
    return m
