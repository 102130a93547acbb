"""How a FeaStConv filter bank assigns neighbors to weight matrices.

Builds a tiny mesh, looks at the soft assignments q_m for one node, and
checks the identity that the Mahalanobis parameterization reproduces a
Gaussian-shaped assignment around learned offsets.
"""

import numpy as np

from feastnet import conv
from feastnet.conv import FeaStConvParams, MahalanobisParams
from feastnet.graph import icosphere, one_ring, mesh_features

mesh = icosphere(1)
g = one_ring(mesh)
X = mesh_features(mesh)
print(f"{mesh.n_vertices} vertices, neighborhood sizes {g.sizes.min()}..{g.sizes.max()}")

# %% random filter bank, M = 4 weight matrices, 3 -> 2 channels
p = conv.init_params(4, 3, 2, rng_seed=0, translation_invariant=True)
q = conv.compute_assignments(p, X, g)
node = 0
print("assignments of node 0's neighbors (rows) to the 4 filters (cols):")
print(np.round(q[g.rows == node], 3))
print("rows sum to", q.sum(axis=1)[:3], "...")

# %% the same bank is invariant to a global shift of the input
print("shift changes q by", np.abs(conv.compute_assignments(p, X + 5.0, g) - q).max())

# %% Mahalanobis form: filters centered on offsets z_m with a shared metric
Z = np.array([[0.3, 0, 0], [-0.3, 0, 0], [0, 0.3, 0], [0, -0.3, 0]])
mp = MahalanobisParams(Z, 20.0 * np.eye(3))
pm = FeaStConvParams.from_mahalanobis(mp, p.W, p.b)
qm = conv.compute_assignments(pm, X, g)
for k, j in enumerate(g.indices[g.rows == node]):
    d = X[j] - X[node]
    print(f"neighbor {j:2d} offset {np.round(d, 2)} -> filter {qm[g.rows == node][k].argmax()}")

Y = conv.forward(pm, X, g)
print("output shape", Y.shape)
