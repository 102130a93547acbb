"""Meshes, point clouds and self-inclusive neighborhood graphs.

Graphs are stored in CSR form. Every node lists itself among its neighbors,
because the convolution averages over ``N_i`` including ``i``. The self entry
carries weight 0 unless set explicitly, so degrees count real edges only.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import BinaryIO, Iterable, Sequence, Union

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

Source = Union[str, os.PathLike, bytes, BinaryIO]


class MeshFormatError(ValueError):
    """Malformed OFF header or body."""


class MeshIndexError(MeshFormatError):
    """A face references a vertex outside ``[0, N)``."""


class TruncatedMeshError(MeshFormatError):
    """The stream ended before the declared vertex/face counts were read."""


class PointCloudFormatError(ValueError):
    """Non-numeric token or mismatched lengths in a labeled point cloud."""


# --------------------------------------------------------------------------
# Data types
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh with ``(N, 3)`` vertices and ``(F, 3)`` integer faces."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must be (N, 3), got {v.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshIndexError("face index out of range")
        if f.size and np.any(
            (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        ):
            raise ValueError("degenerate face (repeated vertex index)")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges ``(i, j)`` with ``i < j``."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e = np.sort(e, axis=1)
        if len(e) == 0:
            return np.zeros((0, 2), dtype=np.int64)
        return np.unique(e, axis=0)


@dataclass(frozen=True, eq=False)
class LabeledPointCloud:
    points: np.ndarray
    labels: np.ndarray
    category: object = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        lab = np.asarray(self.labels, dtype=np.int64).ravel()
        if len(pts) != len(lab):
            raise PointCloudFormatError(
                f"{len(pts)} points but {len(lab)} labels"
            )
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)

    def __len__(self):
        return len(self.points)

    def check_labels(self, allowed: Iterable[int]) -> None:
        """Raise if any label falls outside the category's label subset."""
        bad = np.setdiff1d(self.labels, np.asarray(list(allowed)))
        if bad.size:
            raise ValueError(f"labels {bad.tolist()} not allowed for category")


@dataclass(frozen=True, eq=False)
class Graph:
    """Symmetric, self-inclusive neighborhood graph in CSR layout.

    Parameters
    ----------
    indptr, indices : ndarray
        CSR structure. Row ``i`` holds the sorted neighbor list ``N_i``,
        which always contains ``i``.
    weights : ndarray, optional
        One nonnegative weight per stored entry. Defaults to 1 on edges and
        0 on the self entry.
    """

    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        n = len(indptr) - 1
        rows = np.repeat(np.arange(n), np.diff(indptr))
        if self.weights is None:
            weights = (rows != indices).astype(np.float64)
        else:
            weights = np.asarray(self.weights, dtype=np.float64)
        for a in (indptr, indices, weights):
            a.setflags(write=False)
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "weights", weights)
        self._validate(rows)

    def _validate(self, rows):
        n = self.n
        if np.any(np.diff(self.indptr) < 1):
            raise ValueError("every node needs a nonempty neighbor list")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= n):
            raise ValueError("neighbor index out of range")
        if len(self.weights) != len(self.indices):
            raise ValueError("one weight per neighbor entry required")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite and nonnegative")
        # strictly increasing within each row: sorted, no duplicates
        same_row = rows[1:] == rows[:-1]
        if np.any(np.diff(self.indices)[same_row] <= 0):
            raise ValueError("neighbor lists must be sorted without duplicates")
        if np.count_nonzero(rows == self.indices) != n:
            raise ValueError("graph must be self-inclusive (i in N_i)")
        P = self.to_scipy(pattern=True)
        A = self.to_scipy()
        if (P != P.T).nnz or (A != A.T).nnz:
            raise ValueError("graph must be symmetric")

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_edges(cls, n: int, edges, weights=None) -> "Graph":
        """Build from undirected edges; self entries are added with weight 0.

        Duplicate edges are merged by summing their weights.
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        w = np.ones(len(edges)) if weights is None else np.asarray(weights, float)
        off = edges[:, 0] != edges[:, 1]
        r = np.concatenate([edges[off, 0], edges[off, 1], edges[~off, 0]])
        c = np.concatenate([edges[off, 1], edges[off, 0], edges[~off, 1]])
        vals = np.concatenate([w[off], w[off], w[~off]])
        return cls._from_coo(n, r, c, vals)

    @classmethod
    def from_neighbor_lists(cls, lists: Sequence[Iterable[int]]) -> "Graph":
        """Build from per-node neighbor lists (symmetrized, self added)."""
        n = len(lists)
        r = np.concatenate(
            [np.full(len(list(l)), i) for i, l in enumerate(lists)] + [np.zeros(0, int)]
        )
        c = np.concatenate([np.fromiter(l, dtype=np.int64) for l in lists] + [np.zeros(0, int)])
        edges = np.stack([r, c], axis=1)
        edges = edges[edges[:, 0] != edges[:, 1]]
        edges = np.unique(np.sort(edges, axis=1), axis=0)
        return cls.from_edges(n, edges)

    @classmethod
    def _from_coo(cls, n, rows, cols, vals) -> "Graph":
        diag = np.arange(n)
        rows = np.concatenate([rows, diag])
        cols = np.concatenate([cols, diag])
        vals = np.concatenate([vals, np.zeros(n)])
        A = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        A.sum_duplicates()
        A.sort_indices()
        return cls(A.indptr, A.indices, A.data)

    @classmethod
    def from_scipy(cls, A) -> "Graph":
        """Adopt the pattern and weights of a symmetric sparse matrix."""
        A = sparse.coo_matrix(A)
        off = A.row != A.col
        g = cls._from_coo(A.shape[0], A.row[off], A.col[off], A.data[off])
        if np.any(~off):
            w = np.array(g.weights)
            w[g.self_positions[A.row[~off]]] += A.data[~off]
            g = cls(g.indptr, g.indices, w)
        return g

    # -- accessors ---------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def neighbor_lists(self) -> list[list[int]]:
        return [self.neighbors(i).tolist() for i in range(self.n)]

    @cached_property
    def sizes(self) -> np.ndarray:
        """``|N_i|`` for every node (self included)."""
        return np.diff(self.indptr)

    @cached_property
    def rows(self) -> np.ndarray:
        """Row index of every stored entry (the ``i`` of pair ``(i, j)``)."""
        return np.repeat(np.arange(self.n), self.sizes)

    @cached_property
    def degrees(self) -> np.ndarray:
        """``d_i = sum_j w_ij`` over all stored entries of row ``i``."""
        return np.add.reduceat(self.weights, self.indptr[:-1]) if self.nnz else np.zeros(0)

    @cached_property
    def self_positions(self) -> np.ndarray:
        """Position of the self entry ``(i, i)`` in ``indices``."""
        return np.flatnonzero(self.rows == self.indices)

    @cached_property
    def col_order(self) -> np.ndarray:
        """Stable permutation of entries sorting them by column."""
        return np.argsort(self.indices, kind="stable")

    @property
    def mean_neighbors(self) -> float:
        """K, the average number of neighbors excluding the node itself."""
        return float(self.sizes.mean() - 1)

    def to_scipy(self, pattern: bool = False) -> sparse.csr_matrix:
        data = np.ones(self.nnz) if pattern else self.weights
        return sparse.csr_matrix(
            (data, self.indices, self.indptr), shape=(self.n, self.n)
        )

    def total_weight(self) -> float:
        """Sum of edge weights, each undirected edge and self-loop once."""
        off = self.rows < self.indices
        return float(self.weights[off].sum() + self.weights[self.self_positions].sum())

    def permute(self, perm) -> "Graph":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        r, c = inv[self.rows], inv[self.indices]
        order = np.lexsort((c, r))
        indptr = np.concatenate([[0], np.cumsum(np.bincount(r, minlength=self.n))])
        return Graph(indptr, c[order], self.weights[order])

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None


# --------------------------------------------------------------------------
# File readers
# --------------------------------------------------------------------------


def _read_bytes(src: Source) -> bytes:
    if isinstance(src, (bytes, bytearray)):
        return bytes(src)
    if isinstance(src, (str, os.PathLike)):
        with open(src, "rb") as fh:
            return fh.read()
    return src.read()


def load_off(src: Source) -> Mesh:
    """Parse an ASCII OFF file from a path, bytes or binary stream.

    Comments (``#``) and blank lines are ignored. Only triangles are accepted.
    """
    text = _read_bytes(src).decode("ascii", errors="strict")
    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    if not lines:
        raise TruncatedMeshError("empty OFF stream")
    head = lines[0].split()
    if head[0] != "OFF":
        raise MeshFormatError(f"expected 'OFF' header, got {head[0]!r}")
    rest = lines[1:]
    counts_tokens = head[1:] if len(head) > 1 else (rest.pop(0).split() if rest else [])
    if len(counts_tokens) < 2:
        raise TruncatedMeshError("missing counts line")
    try:
        nv, nf = int(counts_tokens[0]), int(counts_tokens[1])
    except ValueError as exc:
        raise MeshFormatError(f"bad counts line: {counts_tokens}") from exc
    if nv < 0 or nf < 0:
        raise MeshFormatError("negative counts")
    if len(rest) < nv + nf:
        raise TruncatedMeshError(
            f"declared {nv} vertices and {nf} faces, found {len(rest)} lines"
        )
    try:
        verts = np.array(
            [[float(t) for t in rest[k].split()[:3]] for k in range(nv)], dtype=float
        ).reshape(nv, 3)
    except ValueError as exc:
        raise MeshFormatError("vertex lines need three numbers") from exc
    faces = np.zeros((nf, 3), dtype=np.int64)
    for k in range(nf):
        tok = rest[nv + k].split()
        try:
            cnt = int(tok[0])
            idx = [int(t) for t in tok[1:1 + cnt]]
        except ValueError as exc:
            raise MeshFormatError(f"bad face line {rest[nv + k]!r}") from exc
        if cnt != 3 or len(idx) != 3:
            raise MeshFormatError("only triangular faces are supported")
        if min(idx) < 0 or max(idx) >= nv:
            raise MeshIndexError(f"face {k} references vertex outside [0, {nv})")
        faces[k] = idx
    return Mesh(verts, faces)


def save_off(mesh: Mesh, path) -> None:
    buf = io.StringIO()
    buf.write("OFF\n")
    buf.write(f"{mesh.n_vertices} {mesh.n_faces} 0\n")
    for v in mesh.vertices.tolist():
        buf.write(f"{v[0]!r} {v[1]!r} {v[2]!r}\n")
    for f in mesh.faces:
        buf.write(f"3 {f[0]} {f[1]} {f[2]}\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def load_labeled_points(points_src: Source, labels_src: Source, category=None) -> LabeledPointCloud:
    """Read ``x y z`` lines plus a parallel file of integer labels."""
    pts_lines = [l for l in _read_bytes(points_src).decode().splitlines() if l.strip()]
    lab_lines = [l for l in _read_bytes(labels_src).decode().splitlines() if l.strip()]
    if len(pts_lines) != len(lab_lines):
        raise PointCloudFormatError(
            f"{len(pts_lines)} points but {len(lab_lines)} labels"
        )
    try:
        pts = np.array([[float(t) for t in l.split()] for l in pts_lines], dtype=float)
    except ValueError as exc:
        raise PointCloudFormatError(f"non-numeric coordinate: {exc}") from exc
    if pts.size and pts.shape[1:] != (3,):
        raise PointCloudFormatError("each point line needs exactly 3 values")
    try:
        labels = np.array([int(l.strip()) for l in lab_lines], dtype=np.int64)
    except ValueError as exc:
        raise PointCloudFormatError(f"non-integer label: {exc}") from exc
    return LabeledPointCloud(pts.reshape(-1, 3), labels, category)


# --------------------------------------------------------------------------
# Graph construction
# --------------------------------------------------------------------------


def one_ring(mesh: Mesh) -> Graph:
    """Vertex plus all vertices sharing a face edge with it; unit weights."""
    return Graph.from_edges(mesh.n_vertices, mesh.edges)


def ring_k(graph: Graph, k: int) -> Graph:
    """All nodes within ``k`` hops; edge weights reset to 1."""
    if k < 1:
        raise ValueError("k must be a positive integer")
    if k == 1:
        return graph
    A = graph.to_scipy(pattern=True).astype(bool)
    R = A.copy()
    for _ in range(k - 1):
        R = (R @ A).astype(bool)
    R = R.tocoo()
    return Graph.from_edges(graph.n, np.stack([R.row, R.col], axis=1)[R.row < R.col])


def knn_graph(points, k: int, chunk: int = 256) -> Graph:
    """Union-symmetrized k-nearest-neighbor graph with self entries.

    Distance ties are broken toward the lower index.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if k < 1:
        raise ValueError("k must be positive")
    if n <= k:
        raise ValueError(f"need more than k={k} points, got {n}")
    nbrs = np.empty((n, k), dtype=np.int64)
    for s in range(0, n, chunk):
        blk = pts[s:s + chunk]
        d = np.sum((blk[:, None, :] - pts[None, :, :]) ** 2, axis=2)
        d[np.arange(len(blk)), np.arange(s, s + len(blk))] = np.inf
        # stable sort keeps the lower index first among equal distances
        nbrs[s:s + chunk] = np.argsort(d, axis=1, kind="stable")[:, :k]
    edges = np.stack([np.repeat(np.arange(n), k), nbrs.ravel()], axis=1)
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    return Graph.from_edges(n, edges)


# --------------------------------------------------------------------------
# Geometry
# --------------------------------------------------------------------------


def edge_length_graph(mesh: Mesh) -> sparse.csr_matrix:
    e = mesh.edges
    lengths = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    n = mesh.n_vertices
    return sparse.csr_matrix(
        (np.concatenate([lengths, lengths]), (np.concatenate([e[:, 0], e[:, 1]]),
                                              np.concatenate([e[:, 1], e[:, 0]]))),
        shape=(n, n),
    )


def geodesic_distances(mesh: Mesh, source) -> np.ndarray:
    """Shortest-path distances along mesh edges; ``inf`` where unreachable.

    ``source`` may be a single index or a sequence, in which case one row of
    distances is returned per source.
    """
    return csgraph.dijkstra(edge_length_graph(mesh), directed=False, indices=source)


def mean_incident_edge_length(mesh: Mesh) -> np.ndarray:
    e = mesh.edges
    lengths = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    n = mesh.n_vertices
    total = np.bincount(e.ravel(), weights=np.repeat(lengths, 2), minlength=n)
    count = np.bincount(e.ravel(), minlength=n)
    return np.divide(total, count, out=np.zeros(n), where=count > 0)


def add_vertex_noise(mesh: Mesh, sigma_rel: float, rng_seed) -> Mesh:
    """Displace each vertex by isotropic Gaussian noise.

    The per-vertex standard deviation is ``sigma_rel`` times the mean length
    of that vertex's incident edges.
    """
    if sigma_rel < 0:
        raise ValueError("sigma_rel must be nonnegative")
    if sigma_rel == 0:
        return mesh
    rng = np.random.default_rng(rng_seed)
    scale = sigma_rel * mean_incident_edge_length(mesh)
    noise = rng.standard_normal(mesh.vertices.shape) * scale[:, None]
    return Mesh(mesh.vertices + noise, mesh.faces)


def mesh_features(mesh: Mesh, center: bool = True) -> np.ndarray:
    """Raw XYZ input features, optionally centered at the vertex centroid."""
    x = np.array(mesh.vertices)
    if center:
        x -= x.mean(axis=0)
    return x


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> Mesh:
    """Subdivided icosahedron; 12, 42, 162, 642, 2562, ... vertices."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return Mesh(np.array(verts) * radius, np.array(faces))
