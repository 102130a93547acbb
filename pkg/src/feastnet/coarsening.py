"""Greedy Graclus matching and binary-tree orderings for graph pooling.

Coarsening one level merges pairs of nodes; repeating it builds a binary
tree. Singletons are padded with disconnected fake nodes so that, once the
nodes of every level are laid out in tree order, pooling is a plain width-2
max over consecutive rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .graph import Graph
from .layers import PoolMap


@dataclass(frozen=True)
class Matching:
    """``cluster_of[i]`` is the coarse node of fine node ``i``."""

    cluster_of: np.ndarray
    clusters: tuple  # per coarse node, its 1 or 2 fine members (ascending)

    @property
    def n_fine(self) -> int:
        return len(self.cluster_of)

    @property
    def n_coarse(self) -> int:
        return len(self.clusters)


def graclus_step(graph: Graph) -> tuple[Graph, Matching]:
    """One level of greedy normalized-cut matching.

    Nodes are visited in ascending order. An unmarked node ``i`` is merged
    with the unmarked neighbor ``j`` maximizing ``w_ij (1/d_i + 1/d_j)``,
    ties going to the lower ``j``; nodes without a candidate stay single.
    Weights between clusters are summed and intra-cluster weight becomes a
    self-loop on the merged node, so total weight is conserved.
    """
    n = graph.n
    deg = graph.degrees
    indptr, indices, weights = graph.indptr, graph.indices, graph.weights
    marked = np.zeros(n, dtype=bool)
    cluster_of = np.empty(n, dtype=np.int64)
    clusters = []
    inv_deg = np.divide(1.0, deg, out=np.zeros(n), where=deg > 0)
    for i in range(n):
        if marked[i]:
            continue
        marked[i] = True
        lo, hi = indptr[i], indptr[i + 1]
        nbrs = indices[lo:hi]
        cut = weights[lo:hi] * (inv_deg[i] + inv_deg[nbrs])
        cut[marked[nbrs]] = 0.0
        best = -1
        if cut.size:
            k = int(np.argmax(cut))  # first maximum = lowest index
            if cut[k] > 0.0:
                best = int(nbrs[k])
        cid = len(clusters)
        cluster_of[i] = cid
        if best >= 0:
            marked[best] = True
            cluster_of[best] = cid
            clusters.append((i, best))
        else:
            clusters.append((i,))
    return _contract(graph, cluster_of, len(clusters)), Matching(cluster_of, tuple(clusters))


def _contract(graph: Graph, cluster_of: np.ndarray, n_coarse: int) -> Graph:
    r = cluster_of[graph.rows]
    c = cluster_of[graph.indices]
    w = np.array(graph.weights)
    # an intra-cluster edge is stored twice (i,j) and (j,i); count it once
    inner = (r == c) & (graph.rows != graph.indices)
    w[inner] *= 0.5
    return Graph._from_coo(n_coarse, r, c, w)


@dataclass
class CoarseningHierarchy:
    """Graphs, matchings and tree orderings for ``levels`` coarsening steps.

    ``orderings[l][p]`` is the real node of level ``l`` stored at tree
    position ``p``, or -1 for a fake node.
    """

    graphs: list
    matchings: list
    orderings: list
    _tree_graphs: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def levels(self) -> int:
        return len(self.matchings)

    def fake_mask(self, level: int) -> np.ndarray:
        return self.orderings[level] < 0

    def padded_size(self, level: int) -> int:
        return len(self.orderings[level])

    def pool_map(self, level: int) -> PoolMap:
        """Pooling from ``level`` to ``level + 1``."""
        if not 0 <= level < self.levels:
            raise ValueError(f"no pooling from level {level}")
        return PoolMap(self.fake_mask(level))

    def tree_graph(self, level: int) -> Graph:
        """Level graph relabeled into tree order, fake nodes isolated."""
        if level not in self._tree_graphs:
            g = self.graphs[level]
            order = self.orderings[level]
            real = np.flatnonzero(order >= 0)
            pos_of = np.empty(g.n, dtype=np.int64)
            pos_of[order[real]] = real
            self._tree_graphs[level] = Graph._from_coo(
                len(order), pos_of[g.rows], pos_of[g.indices], g.weights
            )
        return self._tree_graphs[level]

    def pool_pairs(self, level: int) -> list[tuple]:
        """Real members of each consecutive pair at ``level``."""
        order = self.orderings[level]
        pairs = []
        for p in range(len(order) // 2):
            members = tuple(int(v) for v in order[2 * p:2 * p + 2] if v >= 0)
            if members:
                pairs.append(members)
        return pairs

    # -- JSON --------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "node_counts": [g.n for g in self.graphs],
            "padded_counts": [len(o) for o in self.orderings],
            "matchings": [[list(map(int, c)) for c in m.clusters] for m in self.matchings],
            "orderings": [o.tolist() for o in self.orderings],
            "fake_masks": [self.fake_mask(l).tolist() for l in range(len(self.orderings))],
            "graphs": [
                {"indptr": g.indptr.tolist(), "indices": g.indices.tolist(),
                 "weights": g.weights.tolist()}
                for g in self.graphs
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "CoarseningHierarchy":
        graphs = [Graph(g["indptr"], g["indices"], g["weights"]) for g in d["graphs"]]
        matchings = []
        for l, clusters in enumerate(d["matchings"]):
            cof = np.empty(graphs[l].n, dtype=np.int64)
            for cid, members in enumerate(clusters):
                cof[members] = cid
            matchings.append(Matching(cof, tuple(tuple(c) for c in clusters)))
        orderings = [np.asarray(o, dtype=np.int64) for o in d["orderings"]]
        return cls(graphs, matchings, orderings)

    @classmethod
    def from_json(cls, text: str) -> "CoarseningHierarchy":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        if not isinstance(other, CoarseningHierarchy):
            return NotImplemented
        return (
            self.graphs == other.graphs
            and all(np.array_equal(a.cluster_of, b.cluster_of) and a.clusters == b.clusters
                    for a, b in zip(self.matchings, other.matchings))
            and len(self.matchings) == len(other.matchings)
            and all(np.array_equal(a, b) for a, b in zip(self.orderings, other.orderings))
        )


def build_hierarchy(graph: Graph, levels: int) -> CoarseningHierarchy:
    if levels < 1:
        raise ValueError("levels must be a positive integer")
    graphs, matchings = [graph], []
    for l in range(levels):
        if graphs[-1].n <= 1:
            raise ValueError(
                f"graph is down to {graphs[-1].n} node(s) after {l} level(s); "
                f"cannot coarsen to {levels} levels"
            )
        g, m = graclus_step(graphs[-1])
        if g.n == graphs[-1].n:
            raise ValueError(f"no edges left to match at level {l}; cannot coarsen to {levels} levels")
        graphs.append(g)
        matchings.append(m)

    # top-down: consecutive positions at each level share a parent
    orderings = [None] * (levels + 1)
    orderings[levels] = np.arange(graphs[levels].n, dtype=np.int64)
    for l in range(levels - 1, -1, -1):
        clusters = matchings[l].clusters
        fine = np.full(2 * len(orderings[l + 1]), -1, dtype=np.int64)
        for p, c in enumerate(orderings[l + 1]):
            if c >= 0:
                members = clusters[c]
                fine[2 * p:2 * p + len(members)] = members
        orderings[l] = fine
    return CoarseningHierarchy(graphs, matchings, orderings)


def reorder_features(X, ordering, fake_mask: Optional[np.ndarray] = None, fill: float = 0.0) -> np.ndarray:
    """Lay real rows out in tree order; fake rows get ``fill``."""
    X = np.asarray(X)
    ordering = np.asarray(ordering)
    real = ordering >= 0 if fake_mask is None else ~np.asarray(fake_mask, bool)
    if X.shape[0] != np.count_nonzero(real):
        raise ValueError(f"X has {X.shape[0]} rows, ordering has {np.count_nonzero(real)} real nodes")
    out = np.full((len(ordering),) + X.shape[1:], fill, dtype=X.dtype)
    out[real] = X[ordering[real]]
    return out


def restore_features(X_padded, ordering) -> np.ndarray:
    """Inverse of :func:`reorder_features` on real rows."""
    X_padded = np.asarray(X_padded)
    ordering = np.asarray(ordering)
    if X_padded.shape[0] != len(ordering):
        raise ValueError("row count does not match ordering length")
    real = np.flatnonzero(ordering >= 0)
    out = np.empty((len(real),) + X_padded.shape[1:], dtype=X_padded.dtype)
    out[ordering[real]] = X_padded[real]
    return out
