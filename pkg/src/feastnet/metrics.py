"""Correspondence accuracy, geodesic error curves, part-labeling IoU, sweeps."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csgraph

from .graph import Mesh, edge_length_graph, geodesic_distances


@dataclass(frozen=True)
class ErrorCurve:
    thresholds: np.ndarray
    fractions: np.ndarray

    def as_rows(self) -> list[dict]:
        return [{"threshold": float(t), "fraction": float(f)}
                for t, f in zip(self.thresholds, self.fractions)]


def correspondence_accuracy(predictions, ground_truth) -> float:
    """Fraction of nodes whose predicted vertex equals the true one."""
    p = np.asarray(predictions)
    g = np.asarray(ground_truth)
    if p.shape != g.shape:
        raise ValueError("predictions and ground truth differ in length")
    if p.size == 0:
        raise ValueError("empty input")
    return float(np.mean(p == g))


def geodesic_errors(predictions, ground_truth, reference: Mesh) -> np.ndarray:
    """Per-node geodesic distance between predicted and true reference vertex."""
    p = np.asarray(predictions, dtype=np.int64)
    g = np.asarray(ground_truth, dtype=np.int64)
    if p.shape != g.shape:
        raise ValueError("predictions and ground truth differ in length")
    n_comp, _ = csgraph.connected_components(edge_length_graph(reference), directed=False)
    if n_comp != 1:
        raise ValueError("reference mesh is not connected")
    sources, inv = np.unique(g, return_inverse=True)
    dist = np.atleast_2d(geodesic_distances(reference, sources))
    return dist[inv, p]


def geodesic_error_curve(predictions, ground_truth, reference: Mesh, thresholds) -> ErrorCurve:
    """Fraction of nodes whose geodesic error is at most each threshold."""
    err = geodesic_errors(predictions, ground_truth, reference)
    t = np.sort(np.asarray(thresholds, dtype=np.float64))
    frac = np.searchsorted(np.sort(err), t, side="right") / len(err)
    return ErrorCurve(t, frac)


def miou(predictions, ground_truth, category_labels: Iterable[int]):
    """Per-part IoU and their mean for one shape.

    A part missing from both prediction and ground truth counts as IoU 1.
    """
    p = np.asarray(predictions)
    g = np.asarray(ground_truth)
    parts = np.asarray(sorted(set(int(v) for v in category_labels)))
    if p.shape != g.shape:
        raise ValueError("predictions and ground truth differ in length")
    for arr in (p, g):
        if not np.all(np.isin(arr, parts)):
            raise ValueError("label outside the category's part set")
    ious = []
    for part in parts:
        inter = np.count_nonzero((p == part) & (g == part))
        union = np.count_nonzero((p == part) | (g == part))
        ious.append(1.0 if union == 0 else inter / union)
    return ious, float(np.mean(ious))


def dataset_miou(shape_scores: Sequence[tuple]) -> dict:
    """``shape_scores`` holds ``(category, shape mIoU)``; returns the mean over
    all shapes and the per-category means."""
    if not shape_scores:
        raise ValueError("no shapes")
    by_cat: dict = {}
    for cat, s in shape_scores:
        by_cat.setdefault(cat, []).append(s)
    return {
        "overall": float(np.mean([s for _, s in shape_scores])),
        "per_category": {str(c): float(np.mean(v)) for c, v in by_cat.items()},
    }


# --------------------------------------------------------------------------
# sweeps and tables
# --------------------------------------------------------------------------


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("FEAST_THREADS", "1")))
    except ValueError:
        return 1


def ablation_sweep(task, setting: str, values: Sequence, cfg) -> list[dict]:
    """Train and evaluate one model per value of ``setting``.

    ``task.run(cfg, **overrides)`` must return a metrics dict. The setting
    ``noise_levels`` goes into the training config; anything else is passed
    to the task as a model override. All runs share ``cfg.rng_seed``.
    """
    def one(value):
        if setting == "noise_levels":
            metrics = task.run(replace(cfg, noise_levels=tuple(value)))
        else:
            metrics = task.run(cfg, **{setting: value})
        return {"setting": setting, "value": value, **metrics}

    workers = min(_workers(), len(values))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, values))
    return [one(v) for v in values]


def to_ndjson(rows: Iterable[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True, default=_jsonable) + "\n" for r in rows)


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, (np.ndarray, tuple)):
        return list(v)
    raise TypeError(type(v))


def format_table(rows: Sequence[dict]) -> str:
    """Plain-text table with aligned columns."""
    if not rows:
        return ""
    cols = list(rows[0])
    fmt = lambda v: f"{v:.4f}" if isinstance(v, float) else str(v)
    cells = [[fmt(r.get(c, "")) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)
