"""Layer-sequence models: single-scale, multi-scale (U-Net style) and part labeler.

A model is a :class:`ModelSpec` (the architecture, JSON-serializable) plus a
dict mapping layer names to parameter blocks. Layers run in order; each
takes the previous output, and ``SkipConcat``/``GlobalMaxConcat`` layers
additionally read earlier outputs by name.

When the architecture contains pooling, features live in the binary-tree order of a
:class:`~feastnet.coarsening.CoarseningHierarchy` from the first layer to the
last, with fake padding rows; the logits are restored to input order.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import conv, layers
from .coarsening import CoarseningHierarchy, reorder_features, restore_features
from .conv import FeaStConvParams
from .graph import Graph
from .layers import LinearParams, UnpoolParams

KINDS = ("Lin", "FeaStConv", "ReLU", "Pool", "Unpool", "SkipConcat", "GlobalMaxConcat")


class MissingHierarchyError(ValueError):
    pass


@dataclass
class LayerSpec:
    kind: str
    name: str
    width: int                # output channels
    level: int = 0            # hierarchy level of the output rows
    M: Optional[int] = None
    translation_invariant: bool = False
    sources: tuple = ()       # extra inputs for the concat layers

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        self.sources = tuple(self.sources)


@dataclass
class ModelSpec:
    layers: list
    d_in: int
    n_classes: int
    name: str = "model"

    def __post_init__(self):
        self.layers = [l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in self.layers]
        self._check()

    def _check(self):
        width, level, seen = self.d_in, 0, {}
        for l in self.layers:
            if l.name in seen:
                raise ValueError(f"duplicate layer name {l.name!r}")
            if l.kind in ("ReLU", "Pool", "Unpool") and l.width != width:
                raise ValueError(f"{l.name}: {l.kind} keeps the width ({width})")
            if l.kind == "Pool" and l.level != level + 1:
                raise ValueError(f"{l.name}: pooling must go one level down")
            if l.kind == "Unpool" and l.level != level - 1:
                raise ValueError(f"{l.name}: unpooling must go one level up")
            if l.kind not in ("Pool", "Unpool") and l.level != level:
                raise ValueError(f"{l.name}: level changes only at Pool/Unpool")
            if l.kind == "SkipConcat":
                src = seen.get(l.sources[0]) if len(l.sources) == 1 else None
                if src is None or src.level != level or l.width != width + src.width:
                    raise ValueError(f"{l.name}: bad skip source")
            if l.kind == "GlobalMaxConcat":
                srcs = [seen.get(s) for s in l.sources]
                if not srcs or any(s is None or s.level != level for s in srcs):
                    raise ValueError(f"{l.name}: bad concat sources")
                if l.width != sum(s.width for s in srcs) + srcs[-1].width:
                    raise ValueError(f"{l.name}: width must be sum of sources plus the max")
            if l.kind == "FeaStConv" and not l.M:
                raise ValueError(f"{l.name}: FeaStConv needs M")
            seen[l.name] = l
            width, level = l.width, l.level
        if width != self.n_classes or level != 0:
            raise ValueError("last layer must output n_classes at level 0")

    def input_widths(self) -> dict[str, int]:
        out, width = {}, self.d_in
        for l in self.layers:
            out[l.name] = width
            width = l.width
        return out

    @property
    def depth(self) -> int:
        return max((l.level for l in self.layers), default=0)

    def to_dict(self) -> dict:
        d = asdict(self)
        for l in d["layers"]:
            l["sources"] = list(l["sources"])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls(**json.loads(text))


# --------------------------------------------------------------------------
# construction
# --------------------------------------------------------------------------


class _Builder:
    def __init__(self, d_in):
        self.layers, self.width, self.level, self.count = [], d_in, 0, 0

    def add(self, kind, width=None, **kw):
        width = self.width if width is None else width
        name = f"{kind.lower()}{self.count}"
        self.count += 1
        self.layers.append(LayerSpec(kind, name, width, kw.pop("level", self.level), **kw))
        self.width, self.level = width, self.layers[-1].level
        return name


def _scaled(w: int, scale: float) -> int:
    return max(1, math.ceil(w * scale))


def init_model_params(spec: ModelSpec, rng_seed=0) -> dict:
    """Random parameters for every Lin/FeaStConv/Unpool layer, one sub-seed each."""
    rng = np.random.default_rng(rng_seed)
    widths = spec.input_widths()
    params = {}
    for l in spec.layers:
        d = widths[l.name]
        if l.kind == "Lin":
            params[l.name] = layers.init_linear(d, l.width, int(rng.integers(2**63)))
        elif l.kind == "FeaStConv":
            params[l.name] = conv.init_params(l.M, d, l.width, int(rng.integers(2**63)),
                                              l.translation_invariant)
        elif l.kind == "Unpool":
            params[l.name] = layers.init_unpool(l.width)
    return params


def build_single_scale(d_in: int, n_classes: int, M: int = 32, width_scale: float = 1.0,
                       translation_invariant: bool = True, rng_seed=0):
    """``Lin16 Conv32 Conv64 Conv128 Lin256 LinC`` with rectifiers between."""
    b = _Builder(d_in)
    b.add("Lin", _scaled(16, width_scale)); b.add("ReLU")
    for w in (32, 64, 128):
        b.add("FeaStConv", _scaled(w, width_scale), M=M, translation_invariant=translation_invariant)
        b.add("ReLU")
    b.add("Lin", _scaled(256, width_scale)); b.add("ReLU")
    b.add("Lin", n_classes)
    spec = ModelSpec(b.layers, d_in, n_classes, "single_scale")
    return spec, init_model_params(spec, rng_seed)


def build_multi_scale(d_in: int, n_classes: int, M: int = 32, hierarchy: CoarseningHierarchy = None,
                      width_scale: float = 1.0, translation_invariant: bool = True, rng_seed=0):
    """Two pooling levels with skip connections (encoder/decoder).

    ``Lin16 Conv32 | Pool Conv64 | Pool Conv128 | Unpool +skip Conv64 |
    Unpool +skip Conv32 | Lin256 LinC``.
    """
    if hierarchy is None or hierarchy.levels < 2:
        raise ValueError("multi-scale model needs a hierarchy with at least 2 levels")
    s = lambda w: _scaled(w, width_scale)
    kw = dict(M=M, translation_invariant=translation_invariant)
    b = _Builder(d_in)
    b.add("Lin", s(16)); b.add("ReLU")
    b.add("FeaStConv", s(32), **kw); skip0 = b.add("ReLU")
    b.add("Pool", level=1)
    b.add("FeaStConv", s(64), **kw); skip1 = b.add("ReLU")
    b.add("Pool", level=2)
    b.add("FeaStConv", s(128), **kw); b.add("ReLU")
    b.add("Unpool", level=1)
    b.add("SkipConcat", b.width + s(64), sources=(skip1,))
    b.add("FeaStConv", s(64), **kw); b.add("ReLU")
    b.add("Unpool", level=0)
    b.add("SkipConcat", b.width + s(32), sources=(skip0,))
    b.add("FeaStConv", s(32), **kw); b.add("ReLU")
    b.add("Lin", s(256)); b.add("ReLU")
    b.add("Lin", n_classes)
    spec = ModelSpec(b.layers, d_in, n_classes, "multi_scale")
    return spec, init_model_params(spec, rng_seed)


def build_part_labeler(d_in: int, n_classes: int = 50, M: int = 16, width_scale: float = 1.0,
                       translation_invariant: bool = True, rng_seed=0):
    """``Lin16 Conv32 Conv64 Conv128 Lin512 Lin2048``, then every layer's
    activations concatenated with the global max of the last, then
    ``Lin1024 LinC``."""
    s = lambda w: _scaled(w, width_scale)
    kw = dict(M=M, translation_invariant=translation_invariant)
    b = _Builder(d_in)
    taps = []
    b.add("Lin", s(16)); taps.append(b.add("ReLU"))
    for w in (32, 64, 128):
        b.add("FeaStConv", s(w), **kw); taps.append(b.add("ReLU"))
    for w in (512, 2048):
        b.add("Lin", s(w)); taps.append(b.add("ReLU"))
    widths = {l.name: l.width for l in b.layers}
    total = sum(widths[t] for t in taps) + widths[taps[-1]]
    b.add("GlobalMaxConcat", total, sources=tuple(taps))
    b.add("Lin", s(1024)); b.add("ReLU")
    b.add("Lin", n_classes)
    spec = ModelSpec(b.layers, d_in, n_classes, "part_labeler")
    return spec, init_model_params(spec, rng_seed)


def count_parameters(params: dict) -> int:
    return sum(a.size for block in params.values() for a in block.arrays().values())


def zero_params(params: dict) -> dict:
    return {k: p.replace(**{n: np.zeros_like(a) for n, a in p.arrays().items()})
            for k, p in params.items()}


def perturb_biases(params: dict, rng) -> dict:
    """Random biases and assignment offsets (they start at zero)."""
    out = {}
    for k, p in params.items():
        upd = {n: rng.normal(scale=0.5, size=a.shape) for n, a in p.arrays().items() if n in ("b", "c")}
        out[k] = p.replace(**upd)
    return out


def flatten_params(params: dict) -> dict[str, np.ndarray]:
    return {f"{k}.{n}": a for k, p in params.items() for n, a in p.arrays().items()}


def unflatten_params(spec: ModelSpec, flat: dict) -> dict:
    params = {}
    for l in spec.layers:
        arrs = {key.split(".", 1)[1]: v for key, v in flat.items() if key.split(".", 1)[0] == l.name}
        if l.kind == "Lin":
            params[l.name] = LinearParams(**arrs)
        elif l.kind == "FeaStConv":
            params[l.name] = FeaStConvParams(translation_invariant=l.translation_invariant, **arrs)
        elif l.kind == "Unpool":
            params[l.name] = UnpoolParams(**arrs)
    return params


# --------------------------------------------------------------------------
# execution
# --------------------------------------------------------------------------


@dataclass
class ForwardCache:
    inputs: dict = field(default_factory=dict)   # layer name -> input array
    aux: dict = field(default_factory=dict)      # layer name -> layer-specific state
    outputs: dict = field(default_factory=dict)
    hierarchy: Optional[CoarseningHierarchy] = None
    graph: Optional[Graph] = None


def _graph_for(level, graph, hierarchy):
    if hierarchy is None:
        return graph
    return hierarchy.tree_graph(level)


def model_forward(spec: ModelSpec, params: dict, X, graph: Optional[Graph] = None,
                  hierarchy: Optional[CoarseningHierarchy] = None):
    """Run every layer; returns ``(logits, cache)`` with one logit row per input node."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.d_in:
        raise ValueError(f"expected {spec.d_in} input columns, got shape {X.shape}")
    if spec.depth > 0:
        if hierarchy is None:
            raise MissingHierarchyError("this model pools; pass a coarsening hierarchy")
        if hierarchy.levels < spec.depth:
            raise MissingHierarchyError(
                f"model needs {spec.depth} levels, hierarchy has {hierarchy.levels}")
    else:
        if graph is None and hierarchy is not None:
            graph = hierarchy.graphs[0]
        hierarchy = None
        if graph is None and any(l.kind == "FeaStConv" for l in spec.layers):
            raise ValueError("a graph is required")
    if hierarchy is not None:
        if X.shape[0] != hierarchy.graphs[0].n:
            raise ValueError("X rows do not match the hierarchy's finest graph")
        cur = reorder_features(X, hierarchy.orderings[0])
    else:
        if graph is not None and graph.n != X.shape[0]:
            raise ValueError("X rows do not match the graph")
        cur = X
    cache = ForwardCache(hierarchy=hierarchy, graph=graph)
    for l in spec.layers:
        cache.inputs[l.name] = cur
        if l.kind == "Lin":
            out = layers.linear_forward(params[l.name], cur)
        elif l.kind == "ReLU":
            out = layers.relu_forward(cur)
        elif l.kind == "FeaStConv":
            g = _graph_for(l.level, graph, hierarchy)
            out, cache.aux[l.name] = conv.forward_with_cache(params[l.name], cur, g)
        elif l.kind == "Pool":
            out, cache.aux[l.name] = layers.max_pool(cur, hierarchy.pool_map(l.level - 1))
        elif l.kind == "Unpool":
            out = layers.unpool(cur, params[l.name], hierarchy.pool_map(l.level))
        elif l.kind == "SkipConcat":
            out = np.concatenate([cur, cache.outputs[l.sources[0]]], axis=1)
        elif l.kind == "GlobalMaxConcat":
            mask = None if hierarchy is None else ~hierarchy.fake_mask(l.level)
            out, cache.aux[l.name] = layers.global_max_concat(
                [cache.outputs[s] for s in l.sources], mask)
        cache.outputs[l.name] = out
        cur = out
    if hierarchy is not None:
        cur = restore_features(cur, hierarchy.orderings[0])
    return cur, cache


def model_backward(spec: ModelSpec, params: dict, cache: ForwardCache, dlogits) -> dict:
    """Gradients for every parameter block: ``{layer: {array name: grad}}``."""
    hierarchy, graph = cache.hierarchy, cache.graph
    g = np.asarray(dlogits, dtype=np.float64)
    if hierarchy is not None:
        g = reorder_features(g, hierarchy.orderings[0])
    pending = {spec.layers[-1].name: g}
    grads = {}
    names = [l.name for l in spec.layers]
    for k in range(len(spec.layers) - 1, -1, -1):
        l = spec.layers[k]
        dout = pending.pop(l.name, None)
        if dout is None:
            dout = np.zeros_like(cache.outputs[l.name])
        x = cache.inputs[l.name]
        if l.kind == "Lin":
            din, dW, db = layers.linear_backward(params[l.name], x, dout)
            grads[l.name] = {"W": dW, "b": db}
        elif l.kind == "ReLU":
            din = layers.relu_backward(x, dout)
        elif l.kind == "FeaStConv":
            gb = conv.backward(params[l.name], x, _graph_for(l.level, graph, hierarchy), dout,
                               cache.aux[l.name])
            din = gb.dX
            grads[l.name] = gb.param_grads()
        elif l.kind == "Pool":
            din = layers.max_pool_backward(dout, cache.aux[l.name], hierarchy.pool_map(l.level - 1))
        elif l.kind == "Unpool":
            din, dk, db = layers.unpool_backward(x, dout, params[l.name], hierarchy.pool_map(l.level))
            grads[l.name] = {"kernel": dk, "b": db}
        elif l.kind == "SkipConcat":
            w = x.shape[1]
            din = dout[:, :w]
            src = l.sources[0]
            pending[src] = pending.get(src, 0.0) + dout[:, w:]
        elif l.kind == "GlobalMaxConcat":
            widths = [cache.outputs[s].shape[1] for s in l.sources]
            parts = layers.global_max_concat_backward(dout, widths, cache.aux[l.name])
            for s, part in zip(l.sources, parts):
                pending[s] = pending.get(s, 0.0) + part
            din = None
        if k > 0 and din is not None:
            prev = names[k - 1]
            pending[prev] = pending.get(prev, 0.0) + din
    return grads


def predict(spec, params, X, graph=None, hierarchy=None, class_mask=None) -> np.ndarray:
    """Argmax class per node (ties to the lowest class index), optionally
    restricted to the classes allowed by ``class_mask``."""
    logits, _ = model_forward(spec, params, X, graph, hierarchy)
    if class_mask is not None:
        logits = np.where(class_mask, logits, -np.inf)
    return np.argmax(logits, axis=1)
