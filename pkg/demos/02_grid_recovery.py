"""Recovering an ordinary 3x3 image convolution with a graph convolution.

With pixel coordinates as extra features and very sharp assignments
centered on the nine grid offsets, each neighbor lands on exactly one
weight matrix, so the graph layer computes the same sums as a grid kernel.
"""

import numpy as np

from feastnet import conv
from feastnet.conv import FeaStConvParams, MahalanobisParams
from feastnet.graph import Graph

rng = np.random.default_rng(0)
H, W = 6, 7
image = rng.normal(size=(H, W))
kernel = rng.normal(size=(9, 1, 1))
bias = np.array([0.25])

# %% 8-neighbor grid with a zero frame, so interior pixels see 9 nodes
h, w = H + 2, W + 2
idx = np.arange(h * w).reshape(h, w)
edges = [(idx[r, c], idx[r + dr, c + dc])
         for r in range(h) for c in range(w)
         for dr, dc in ((0, 1), (1, -1), (1, 0), (1, 1))
         if 0 <= r + dr < h and 0 <= c + dc < w]
g = Graph.from_edges(h * w, edges)

framed = np.zeros((h, w))
framed[1:-1, 1:-1] = image
rows, cols = np.mgrid[0:h, 0:w]
X = np.stack([framed.ravel(), rows.ravel(), cols.ravel()], axis=1).astype(float)

# %% offsets in the coordinate channels, a steep metric
Z = np.zeros((9, 3))
Z[:, 1:] = conv.grid_offsets(3, 3)
mp = MahalanobisParams(Z, 1e4 * np.eye(3))
Wt = np.zeros((9, 1, 3))
Wt[:, :, 0] = 9.0 * kernel[:, :, 0]  # undo the 1/|N_i| average
p = FeaStConvParams.from_mahalanobis(mp, Wt, bias)

ours = conv.forward(p, X, g).reshape(h, w)[1:-1, 1:-1]
ref = conv.grid_reference_conv(kernel, bias, image[..., None])[..., 0]
print("max deviation from the grid kernel:", np.abs(ours - ref).max())
