"""Per-node layers: linear maps, rectifier, loss, pooling over tree orderings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass
class LinearParams:
    W: np.ndarray   # (E, D)
    b: np.ndarray   # (E,)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError("LinearParams needs W (E, D) and b (E,)")

    def arrays(self):
        return {"W": self.W, "b": self.b}

    def replace(self, **arrays):
        return LinearParams(**{**self.arrays(), **arrays})


def init_linear(D: int, E: int, rng_seed=None) -> LinearParams:
    rng = np.random.default_rng(rng_seed)
    return LinearParams(rng.normal(0.0, np.sqrt(2.0 / D), size=(E, D)), np.zeros(E))


def linear_forward(p: LinearParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != p.W.shape[1]:
        raise ValueError(f"X must have {p.W.shape[1]} columns, got {X.shape}")
    return X @ p.W.T + p.b


def linear_backward(p: LinearParams, X, dY):
    """Returns ``(dX, dW, db)``."""
    X = np.asarray(X, dtype=np.float64)
    dY = np.asarray(dY, dtype=np.float64)
    if dY.shape != (X.shape[0], p.W.shape[0]):
        raise ValueError("dY shape mismatch")
    return dY @ p.W, dY.T @ X, dY.sum(axis=0)


def relu_forward(X) -> np.ndarray:
    return np.maximum(X, 0.0)


def relu_backward(X, dY) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return np.where(np.asarray(X) > 0, dY, 0.0)


def softmax_cross_entropy(logits, targets, class_mask=None):
    """Mean negative log-likelihood over nodes and its gradient.

    Parameters
    ----------
    logits : (N, C) array
    targets : (N,) int array
    class_mask : (C,) or (N, C) bool array, optional
        Classes set to False get logit -inf, so they take no probability
        mass. Used to restrict part labels to the sample's category.

    Returns
    -------
    loss : float
    dlogits : (N, C) array
    """
    z = np.array(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.int64)
    N, C = z.shape
    if t.shape != (N,):
        raise ValueError("one target per node required")
    if np.any((t < 0) | (t >= C)):
        raise ValueError(f"targets must lie in [0, {C})")
    if class_mask is not None:
        mask = np.broadcast_to(np.asarray(class_mask, dtype=bool), (N, C))
        if not np.all(mask[np.arange(N), t]):
            raise ValueError("target outside the allowed class mask")
        z[~mask] = -np.inf
    z -= z.max(axis=1, keepdims=True)
    logp = z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))
    loss = -float(np.mean(logp[np.arange(N), t]))
    grad = np.exp(logp)
    grad[np.arange(N), t] -= 1.0
    grad /= N
    return loss, grad


# --------------------------------------------------------------------------
# pooling over binary-tree orderings
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PoolMap:
    """Pairs consecutive fine positions ``(2p, 2p+1)`` under coarse position ``p``.

    ``fake`` marks fine positions that hold padding nodes with no real
    counterpart.
    """

    fake: np.ndarray

    def __post_init__(self):
        fake = np.asarray(self.fake, dtype=bool)
        if len(fake) % 2:
            raise ValueError("fine ordering length must be even")
        object.__setattr__(self, "fake", fake)

    @property
    def n_fine(self) -> int:
        return len(self.fake)

    @property
    def n_coarse(self) -> int:
        return len(self.fake) // 2

    @property
    def coarse_fake(self) -> np.ndarray:
        return self.fake[0::2] & self.fake[1::2]


def max_pool(X, pm: PoolMap):
    """Per-channel max over each child pair; fake children never win.

    Returns ``(pooled, argmax)`` where ``argmax`` holds fine row indices.
    Coarse positions whose children are both fake get value 0.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != pm.n_fine:
        raise ValueError(f"expected {pm.n_fine} rows, got {X.shape[0]}")
    Z = np.where(pm.fake[:, None], -np.inf, X)
    left, right = Z[0::2], Z[1::2]
    pick_right = right > left
    base = 2 * np.arange(pm.n_coarse)[:, None]
    argmax = base + pick_right
    out = np.where(pick_right, right, left)
    out[pm.coarse_fake] = 0.0
    return out, argmax


def max_pool_backward(dY, argmax, pm: PoolMap):
    dY = np.asarray(dY, dtype=np.float64)
    dX = np.zeros((pm.n_fine, dY.shape[1]))
    live = ~pm.coarse_fake
    cols = np.broadcast_to(np.arange(dY.shape[1]), dY.shape)
    dX[argmax[live], cols[live]] = dY[live]
    return dX


@dataclass
class UnpoolParams:
    """Depthwise transposed convolution, width 2 and stride 2."""

    kernel: np.ndarray   # (C, 2)
    b: np.ndarray        # (C,)

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.kernel.ndim != 2 or self.kernel.shape[1] != 2 or self.b.shape != (self.kernel.shape[0],):
            raise ValueError("UnpoolParams needs kernel (C, 2) and b (C,)")

    def arrays(self):
        return {"kernel": self.kernel, "b": self.b}

    def replace(self, **arrays):
        return UnpoolParams(**{**self.arrays(), **arrays})


def init_unpool(C: int) -> UnpoolParams:
    """Copy-unpooling: both children receive the coarse value."""
    return UnpoolParams(np.ones((C, 2)), np.zeros(C))


def unpool(X, up: UnpoolParams, pm: PoolMap) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape != (pm.n_coarse, up.kernel.shape[0]):
        raise ValueError(f"expected {(pm.n_coarse, up.kernel.shape[0])}, got {X.shape}")
    out = np.empty((pm.n_fine, X.shape[1]))
    out[0::2] = X * up.kernel[:, 0] + up.b
    out[1::2] = X * up.kernel[:, 1] + up.b
    out[pm.fake] = 0.0
    return out


def unpool_backward(X, dY, up: UnpoolParams, pm: PoolMap):
    """Returns ``(dX, dkernel, db)``."""
    X = np.asarray(X, dtype=np.float64)
    dY = np.where(pm.fake[:, None], 0.0, dY)
    d0, d1 = dY[0::2], dY[1::2]
    dX = d0 * up.kernel[:, 0] + d1 * up.kernel[:, 1]
    dk = np.stack([np.sum(d0 * X, axis=0), np.sum(d1 * X, axis=0)], axis=1)
    return dX, dk, dY.sum(axis=0)


def global_max_concat(features: Sequence[np.ndarray], mask: Optional[np.ndarray] = None):
    """Concatenate per-node features and broadcast the last one's column max.

    ``mask`` optionally excludes rows (fake nodes) from the max. Returns
    ``(out, argmax)`` with ``argmax`` the row index of each column's maximum,
    ties resolved to the lowest row.
    """
    features = [np.asarray(f, dtype=np.float64) for f in features]
    n = features[0].shape[0]
    if any(f.shape[0] != n for f in features):
        raise ValueError("all feature matrices must share the row count")
    last = features[-1]
    if mask is not None:
        last = np.where(np.asarray(mask, bool)[:, None], last, -np.inf)
    argmax = np.argmax(last, axis=0)
    gmax = last[argmax, np.arange(last.shape[1])]
    out = np.concatenate(features + [np.broadcast_to(gmax, (n, len(gmax)))], axis=1)
    return out, argmax


def global_max_concat_backward(dY, widths: Sequence[int], argmax):
    """Split the gradient back onto the sources; the max part goes to the argmax rows."""
    dY = np.asarray(dY, dtype=np.float64)
    grads, off = [], 0
    for w in widths:
        grads.append(np.array(dY[:, off:off + w]))
        off += w
    dmax = dY[:, off:].sum(axis=0)
    grads[-1][argmax, np.arange(len(dmax))] += dmax
    return grads
