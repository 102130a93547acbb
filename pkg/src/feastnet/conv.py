"""Feature-steered graph convolution.

Each neighbor ``j`` of node ``i`` is softly assigned to ``M`` weight matrices
with weights ``q_m(x_i, x_j) = softmax_m(u_m.x_i + v_m.x_j + c_m)``, and

    y_i = b + sum_m 1/|N_i| sum_{j in N_i} q_m(x_i, x_j) W_m x_j

Shapes: ``X`` is ``(N, D)``, ``W`` is ``(M, E, D)``, ``u``/``v`` are
``(M, D)``, ``c`` is ``(M,)`` and ``b`` is ``(E,)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .graph import Graph


@dataclass
class FeaStConvParams:
    """Parameters of one convolution layer.

    In translation-invariant mode only ``u`` is stored and ``v = -u`` is
    implied; the assignment logits then read ``u_m.(x_i - x_j) + c_m``, which
    is ``v_m.(x_j - x_i) + c_m``.
    """

    W: np.ndarray
    u: np.ndarray
    c: np.ndarray
    b: np.ndarray
    v: Optional[np.ndarray] = None
    translation_invariant: bool = False

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.u = np.asarray(self.u, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        M, E, D = self.W.shape
        if self.translation_invariant:
            if self.v is not None:
                raise ValueError("translation-invariant params store no v")
        else:
            if self.v is None:
                raise ValueError("v is required unless translation_invariant")
            self.v = np.asarray(self.v, dtype=np.float64)
            if self.v.shape != (M, D):
                raise ValueError(f"v must be {(M, D)}, got {self.v.shape}")
        if self.u.shape != (M, D) or self.c.shape != (M,) or self.b.shape != (E,):
            raise ValueError("inconsistent parameter shapes")
        for a in self.arrays().values():
            if not np.all(np.isfinite(a)):
                raise ValueError("parameters must be finite")

    @property
    def M(self) -> int:
        return self.W.shape[0]

    @property
    def E(self) -> int:
        return self.W.shape[1]

    @property
    def D(self) -> int:
        return self.W.shape[2]

    def effective_v(self) -> np.ndarray:
        return -self.u if self.translation_invariant else self.v

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"W": self.W, "u": self.u, "c": self.c, "b": self.b}
        if not self.translation_invariant:
            out["v"] = self.v
        return out

    def replace(self, **arrays) -> "FeaStConvParams":
        kw = {**self.arrays(), **arrays}
        return FeaStConvParams(translation_invariant=self.translation_invariant, **kw)

    @classmethod
    def from_mahalanobis(cls, mp: "MahalanobisParams", W, b) -> "FeaStConvParams":
        u, _, c = from_mahalanobis(mp)
        return cls(W=W, u=u, c=c, b=b, translation_invariant=True)


@dataclass
class MahalanobisParams:
    """Reference points ``Z`` (M, D) and a shared positive-definite ``Sigma``."""

    Z: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=np.float64))
        self.Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=np.float64))
        D = self.Z.shape[1]
        if self.Sigma.shape != (D, D):
            raise ValueError(f"Sigma must be {(D, D)}")
        if np.max(np.abs(self.Sigma - self.Sigma.T), initial=0.0) > 1e-12:
            raise ValueError("Sigma must be symmetric")
        if np.linalg.eigvalsh(self.Sigma).min() <= 0:
            raise ValueError("Sigma must be positive definite")


class GradientBundle(NamedTuple):
    dX: np.ndarray
    dW: np.ndarray
    du: np.ndarray
    dv: Optional[np.ndarray]
    dc: np.ndarray
    db: np.ndarray

    def param_grads(self) -> dict[str, np.ndarray]:
        out = {"W": self.dW, "u": self.du, "c": self.dc, "b": self.db}
        if self.dv is not None:
            out["v"] = self.dv
        return out


class _Cache(NamedTuple):
    q: np.ndarray         # (nnz, M) assignments
    P: np.ndarray         # (N, M, E) projections W_m x_j
    diff: Optional[np.ndarray]


def _check(params: FeaStConvParams, X: np.ndarray, graph: Graph) -> None:
    if X.ndim != 2 or X.shape[1] != params.D:
        raise ValueError(f"X must have {params.D} columns, got shape {X.shape}")
    if X.shape[0] != graph.n:
        raise ValueError(f"X has {X.shape[0]} rows but graph has {graph.n} nodes")


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def _logits(params, X, graph):
    rows, cols = graph.rows, graph.indices
    if params.translation_invariant:
        # u.x_i + v.x_j with v = -u; differences first, so a shared shift
        # of X cancels exactly
        diff = X[rows] - X[cols]
        return diff @ params.u.T + params.c, diff
    A = X @ params.u.T
    B = X @ params.v.T
    return A[rows] + B[cols] + params.c, None


def compute_assignments(params: FeaStConvParams, X, graph: Graph) -> np.ndarray:
    """Soft-assignments ``q`` as an ``(nnz, M)`` array aligned with ``graph.indices``."""
    X = np.asarray(X, dtype=np.float64)
    _check(params, X, graph)
    logits, _ = _logits(params, X, graph)
    return _softmax_rows(logits)


def _forward(params, X, graph):
    logits, diff = _logits(params, X, graph)
    q = _softmax_rows(logits)
    M, E, D = params.W.shape
    P = (X @ params.W.reshape(M * E, D).T).reshape(-1, M, E)
    msg = np.einsum("em,emk->ek", q, P[graph.indices])
    Y = np.add.reduceat(msg, graph.indptr[:-1], axis=0)
    Y /= graph.sizes[:, None]
    Y += params.b
    return Y, _Cache(q, P, diff)


def forward(params: FeaStConvParams, X, graph: Graph) -> np.ndarray:
    """Apply the convolution; returns an ``(N, E)`` feature matrix."""
    X = np.asarray(X, dtype=np.float64)
    _check(params, X, graph)
    return _forward(params, X, graph)[0]


def forward_with_cache(params, X, graph):
    X = np.asarray(X, dtype=np.float64)
    _check(params, X, graph)
    return _forward(params, X, graph)


def backward(params: FeaStConvParams, X, graph: Graph, dY, cache=None) -> GradientBundle:
    """Gradients of ``L = sum_i dY_i . y_i`` w.r.t. the input and every parameter."""
    X = np.asarray(X, dtype=np.float64)
    dY = np.asarray(dY, dtype=np.float64)
    _check(params, X, graph)
    if dY.shape != (graph.n, params.E):
        raise ValueError(f"dY must be {(graph.n, params.E)}, got {dY.shape}")
    if cache is None:
        cache = _forward(params, X, graph)[1]
    q, P, diff = cache
    rows, cols, ptr = graph.rows, graph.indices, graph.indptr[:-1]
    corder = graph.col_order

    g = (dY / graph.sizes[:, None])[rows]                       # (nnz, E)
    dq = np.einsum("ek,emk->em", g, P[cols])                     # (nnz, M)
    dP_edge = q[:, :, None] * g[:, None, :]                      # (nnz, M, E)
    # symmetric pattern: column counts equal row sizes, so indptr segments
    dP = np.add.reduceat(dP_edge[corder], ptr, axis=0)           # (N, M, E)
    dW = np.einsum("nme,nd->med", dP, X)
    dX = np.einsum("nme,med->nd", dP, params.W)

    dlogit = q * (dq - np.sum(q * dq, axis=1, keepdims=True))
    dc = dlogit.sum(axis=0)
    S_row = np.add.reduceat(dlogit, ptr, axis=0)                 # (N, M)
    S_col = np.add.reduceat(dlogit[corder], ptr, axis=0)
    if params.translation_invariant:
        du = dlogit.T @ diff
        dv = None
        dX += (S_row - S_col) @ params.u
    else:
        du = S_row.T @ X
        dv = S_col.T @ X
        dX += S_row @ params.u + S_col @ params.v
    db = dY.sum(axis=0)
    return GradientBundle(dX, dW, du, dv, dc, db)


def from_mahalanobis(mp: MahalanobisParams):
    """Map Mahalanobis assignments onto linear logits.

    ``softmax_m(-(x_ij - z_m)' Sigma (x_ij - z_m))`` equals the linear
    assignment with ``u_m = -2 Sigma z_m``, ``v_m = -u_m`` and
    ``c_m = -z_m' Sigma z_m``; the quadratic term in ``x_ij`` is the same for
    every ``m`` and drops out of the softmax.
    """
    Sz = mp.Z @ mp.Sigma.T
    u = -2.0 * Sz
    c = -np.einsum("md,md->m", mp.Z, Sz)
    return u, -u, c


def grid_offsets(h: int, w: int) -> np.ndarray:
    """Relative ``(row, col)`` offsets of a ``h x w`` window in row-major order."""
    m = np.arange(h * w)
    return np.stack([m // w - h // 2, m % w - w // 2], axis=1)


def grid_reference_conv(filters, bias, image, window=None) -> np.ndarray:
    """Ordinary zero-padded grid convolution written as ``y = b + sum_m W_m x_n(m,i)``.

    ``filters`` is ``(M, E, D)`` ordered row-major over the window, ``image``
    is ``(H, W, D)``. ``window`` defaults to a square ``sqrt(M)``.
    """
    filters = np.asarray(filters, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    M, E, D = filters.shape
    if window is None:
        s = int(round(M ** 0.5))
        window = (s, s)
    h, w = window
    if M != h * w:
        raise ValueError(f"M={M} does not match a {h}x{w} window")
    H, Wd, _ = image.shape
    ph, pw = h // 2, w // 2
    pad = np.zeros((H + h, Wd + w, D))
    pad[ph:ph + H, pw:pw + Wd] = image
    out = np.broadcast_to(np.asarray(bias, dtype=np.float64), (H, Wd, E)).copy()
    for m, (dr, dc) in enumerate(grid_offsets(h, w)):
        out += pad[ph + dr:ph + dr + H, pw + dc:pw + dc + Wd] @ filters[m].T
    return out


def init_params(M: int, D: int, E: int, rng_seed=None, translation_invariant: bool = False) -> FeaStConvParams:
    """Random init: ``W ~ N(0, 2M/D)``, ``u, v ~ N(0, 1/D)``, zero ``c`` and ``b``.

    Each ``W_m`` receives about ``1/M`` of the assignment mass, so the
    fan-in ``D`` is scaled by ``1/M``; this keeps activations at unit scale
    when the assignments are close to uniform.
    """
    if min(M, D, E) < 1:
        raise ValueError("M, D and E must be positive")
    rng = np.random.default_rng(rng_seed)
    W = rng.normal(0.0, np.sqrt(2.0 * M / D), size=(M, E, D))
    u = rng.normal(0.0, np.sqrt(1.0 / D), size=(M, D))
    v = None if translation_invariant else rng.normal(0.0, np.sqrt(1.0 / D), size=(M, D))
    return FeaStConvParams(W=W, u=u, v=v, c=np.zeros(M), b=np.zeros(E),
                           translation_invariant=translation_invariant)


def parameter_count(M: int, D: int, E: int, translation_invariant: bool = False) -> int:
    """Weights ``MDE``, assignment vectors ``2MD`` (``MD`` when v is tied), ``M`` offsets, ``E`` biases."""
    assign = M * D if translation_invariant else 2 * M * D
    return M * D * E + assign + M + E
