"""Central finite differences and randomized gradient suites."""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import conv, layers
from .graph import Graph, knn_graph


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray) -> np.ndarray:
    """Central differences of scalar ``f`` with step ``1e-6 * max(1, |x|)``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        h = 1e-6 * max(1.0, abs(orig))
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic, numeric) -> float:
    """``max|a - n| / max(max|a|, max|n|)`` over one gradient block."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


def random_graph(rng, n: int, k: int = 3) -> Graph:
    pts = rng.normal(size=(n, 3))
    return knn_graph(pts, min(k, n - 1)) if n > 1 else Graph([0, 1], [0])


def check_feast_conv(rng, translation_invariant: bool, max_n=30, max_dim=8, max_m=4,
                     corrupt: float = 0.0) -> dict[str, float]:
    """One randomized instance; returns the relative error per gradient block."""
    N = int(rng.integers(2, max_n + 1))
    D = int(rng.integers(1, max_dim + 1))
    E = int(rng.integers(1, max_dim + 1))
    M = int(rng.integers(1, max_m + 1))
    g = random_graph(rng, N, int(rng.integers(1, 6)))
    p = conv.init_params(M, D, E, int(rng.integers(2**31)), translation_invariant)
    p = p.replace(c=rng.normal(size=M), b=rng.normal(size=E))
    X = rng.normal(size=(N, D))
    dY = rng.normal(size=(N, E))
    gb = conv.backward(p, X, g, dY)

    def loss(params, x):
        return float(np.sum(conv.forward(params, x, g) * dY))

    errs = {"X": relative_error(gb.dX * (1 + corrupt), numerical_gradient(lambda x: loss(p, x), X))}
    for name, grad in gb.param_grads().items():
        num = numerical_gradient(lambda a: loss(p.replace(**{name: a}), X), p.arrays()[name])
        errs[name] = relative_error(grad, num)
    return errs


def check_linear(rng) -> float:
    N, D, E = (int(v) for v in rng.integers(1, 10, size=3))
    p = layers.init_linear(D, E, int(rng.integers(2**31)))
    p = p.replace(b=rng.normal(size=E))
    X = rng.normal(size=(N, D))
    dY = rng.normal(size=(N, E))
    dX, dW, db = layers.linear_backward(p, X, dY)
    f = lambda P, x: float(np.sum(layers.linear_forward(P, x) * dY))
    return max(
        relative_error(dX, numerical_gradient(lambda x: f(p, x), X)),
        relative_error(dW, numerical_gradient(lambda w: f(p.replace(W=w), X), p.W)),
        relative_error(db, numerical_gradient(lambda b: f(p.replace(b=b), X), p.b)),
    )


def check_relu(rng) -> float:
    X = rng.normal(size=(8, 5))
    X[np.abs(X) < 1e-3] = 0.5  # keep away from the kink
    dY = rng.normal(size=X.shape)
    num = numerical_gradient(lambda x: float(np.sum(layers.relu_forward(x) * dY)), X)
    return relative_error(layers.relu_backward(X, dY), num)


def check_cross_entropy(rng) -> float:
    N, C = int(rng.integers(1, 10)), int(rng.integers(2, 8))
    logits = rng.normal(size=(N, C)) * 3
    t = rng.integers(0, C, size=N)
    mask = rng.random((N, C)) < 0.7
    mask[np.arange(N), t] = True
    _, grad = layers.softmax_cross_entropy(logits, t, mask)
    num = numerical_gradient(lambda z: layers.softmax_cross_entropy(z, t, mask)[0], logits)
    return relative_error(grad, num)


def check_pooling(rng) -> tuple[float, float]:
    n_coarse, C = int(rng.integers(1, 8)), int(rng.integers(1, 5))
    fake = np.zeros(2 * n_coarse, bool)
    fake[1::2] = rng.random(n_coarse) < 0.3
    pm = layers.PoolMap(fake)
    X = rng.normal(size=(pm.n_fine, C))
    dY = rng.normal(size=(pm.n_coarse, C))
    _, am = layers.max_pool(X, pm)
    num = numerical_gradient(lambda x: float(np.sum(layers.max_pool(x, pm)[0] * dY)), X)
    pool_err = relative_error(layers.max_pool_backward(dY, am, pm), num)

    up = layers.UnpoolParams(rng.normal(size=(C, 2)), rng.normal(size=C))
    Xc = rng.normal(size=(pm.n_coarse, C))
    dF = rng.normal(size=(pm.n_fine, C))
    f = lambda P, x: float(np.sum(layers.unpool(x, P, pm) * dF))
    dX, dk, db = layers.unpool_backward(Xc, dF, up, pm)
    unpool_err = max(
        relative_error(dX, numerical_gradient(lambda x: f(up, x), Xc)),
        relative_error(dk, numerical_gradient(lambda k: f(up.replace(kernel=k), Xc), up.kernel)),
        relative_error(db, numerical_gradient(lambda b: f(up.replace(b=b), Xc), up.b)),
    )
    return pool_err, unpool_err


def check_model(rng, arch: str) -> float:
    """Whole-model check on a tiny instance; max relative error over all blocks."""
    from . import models
    from .coarsening import build_hierarchy

    n = int(rng.integers(6, 16))
    g = random_graph(rng, n, 3)
    D, C = 3, int(rng.integers(2, 6))
    seed = int(rng.integers(2**31))
    hierarchy = None
    if arch == "single":
        spec, params = models.build_single_scale(D, C, M=3, width_scale=6 / 256, rng_seed=seed,
                                                 translation_invariant=bool(rng.integers(2)))
    elif arch == "multi":
        hierarchy = build_hierarchy(g, 2)
        spec, params = models.build_multi_scale(D, C, M=2, hierarchy=hierarchy, width_scale=6 / 128,
                                                rng_seed=seed)
    else:
        spec, params = models.build_part_labeler(D, C, M=2, width_scale=6 / 2048, rng_seed=seed)
    params = models.perturb_biases(params, rng)
    X = rng.normal(size=(n, D))
    t = rng.integers(0, C, size=n)

    def loss(P):
        logits, _ = models.model_forward(spec, P, X, g, hierarchy)
        return layers.softmax_cross_entropy(logits, t)[0]

    logits, cache = models.model_forward(spec, params, X, g, hierarchy)
    _, dlogits = layers.softmax_cross_entropy(logits, t)
    grads = models.model_backward(spec, params, cache, dlogits)
    worst = 0.0
    for lname, block in params.items():
        for aname, arr in block.arrays().items():
            def f(a, lname=lname, aname=aname):
                P = dict(params)
                P[lname] = block.replace(**{aname: a})
                return loss(P)
            worst = max(worst, relative_error(grads[lname][aname], numerical_gradient(f, arr)))
    return worst


def run_suite(seed: int = 0, trials: int = 50, model_trials: int = 3, corrupt: str | None = None):
    """Run every randomized check; returns ``{layer kind: worst relative error}``."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    worst: dict[str, float] = {}

    def note(kind, err):
        worst[kind] = max(worst.get(kind, 0.0), err)

    bump = 1e-3
    for t in range(trials):
        ti = bool(t % 2)
        errs = check_feast_conv(rng, ti, corrupt=bump if corrupt == "feast-conv" else 0.0)
        note("feast-conv-ti" if ti else "feast-conv", max(errs.values()))
    for _ in range(max(1, trials // 5)):
        note("linear", check_linear(rng) + (bump if corrupt == "linear" else 0.0))
        note("relu", check_relu(rng))
        note("cross-entropy", check_cross_entropy(rng))
        p, u = check_pooling(rng)
        note("max-pool", p)
        note("unpool", u)
    for _ in range(model_trials):
        for arch in ("single", "multi", "partlabel"):
            note(f"model-{arch}", check_model(rng, arch))
    worst["_seconds"] = time.perf_counter() - start
    return worst
