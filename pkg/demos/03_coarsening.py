"""Graclus coarsening and the binary-tree ordering used for pooling.

Each step greedily pairs nodes by normalized cut weight. Unmatched nodes
get a fake partner so that pooling reduces to taking the max over
consecutive pairs of a reordered signal.
"""

import numpy as np

from feastnet.coarsening import build_hierarchy, graclus_step, reorder_features
from feastnet.graph import Graph, knn_graph
from feastnet.layers import PoolMap, max_pool

# %% the path 0-1-2-3 collapses to two pairs
coarse, m = graclus_step(Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)]))
print("clusters", m.clusters)
print("coarse adjacency\n", coarse.to_scipy().toarray())

# %% a point cloud graph, three levels
pts = np.random.default_rng(0).normal(size=(300, 3))
h = build_hierarchy(knn_graph(pts, 6), 3)
for l, (g, order) in enumerate(zip(h.graphs, h.orderings)):
    print(f"level {l}: {g.n} nodes ({len(order)} with padding)")

# %% pooling a signal: fake slots never win the max
x = np.arange(h.graphs[0].n, dtype=float)[:, None]
order = h.orderings[0]
padded = reorder_features(x, order)
pooled, _ = max_pool(padded, PoolMap(order < 0))
print(f"{len(x)} values -> {len(pooled)} pooled; first pairs", order[:6], "->", pooled[:3, 0])
