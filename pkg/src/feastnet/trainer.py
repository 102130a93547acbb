"""Plain SGD with weight decay, one graph per step."""

from __future__ import annotations

import configparser
import json
import logging
from dataclasses import dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from . import layers, models
from .coarsening import CoarseningHierarchy
from .graph import Graph, Mesh, add_vertex_noise

logger = logging.getLogger(__name__)

NO_DECAY = ("b", "c")


class TrainingDivergedError(RuntimeError):
    """Loss became NaN or infinite."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    weight_decay: float = 1e-4
    epochs: int = 1
    rng_seed: int = 0
    noise_levels: tuple = ()
    checkpoint_interval: int = 0

    def __post_init__(self):
        self.noise_levels = tuple(float(v) for v in self.noise_levels)
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if not self.weight_decay >= 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if any(v < 0 for v in self.noise_levels):
            raise ValueError("noise levels must be nonnegative")

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in types:
                raise ValueError(f"unknown training option {key!r}")
            if key == "noise_levels":
                if isinstance(raw, str):
                    raw = [v for v in raw.replace(",", " ").split() if v]
                kw[key] = tuple(float(v) for v in raw)
            elif key in ("epochs", "rng_seed", "checkpoint_interval"):
                kw[key] = int(raw)
            else:
                kw[key] = float(raw)
        return cls(**kw)

    @classmethod
    def from_ini(cls, path, section: str = "train") -> "TrainConfig":
        cp = configparser.ConfigParser()
        with open(path) as fh:
            cp.read_file(fh)
        return cls.from_mapping(dict(cp[section]) if cp.has_section(section) else {})

    def to_dict(self) -> dict:
        return {f.name: (list(getattr(self, f.name)) if f.name == "noise_levels" else getattr(self, f.name))
                for f in fields(self)}


@dataclass
class Sample:
    """One training graph. ``mesh`` is needed only for noise augmentation,
    which assumes ``features`` are vertex coordinates up to a translation."""

    features: np.ndarray
    targets: np.ndarray
    graph: Optional[Graph] = None
    hierarchy: Optional[CoarseningHierarchy] = None
    class_mask: Optional[np.ndarray] = None
    mesh: Optional[Mesh] = None


@dataclass
class TrainResult:
    params: dict
    losses: list
    records: list = field(default_factory=list)
    epoch: int = 0
    rng_state: Optional[dict] = None


def sgd_step(params: dict, grads: dict, cfg: TrainConfig) -> dict:
    """``theta <- theta - lr (g + wd theta)``; biases and offsets ``c`` skip decay."""
    lr, wd = cfg.learning_rate, cfg.weight_decay
    out = {}
    for name, block in params.items():
        g = grads.get(name, {})
        upd = {}
        for aname, theta in block.arrays().items():
            grad = g.get(aname)
            if grad is None:
                grad = np.zeros_like(theta)
            if grad.shape != theta.shape:
                raise ValueError(f"{name}.{aname}: gradient shape {grad.shape} != {theta.shape}")
            decay = 0.0 if aname in NO_DECAY else wd
            upd[aname] = theta - lr * (grad + decay * theta)
        out[name] = block.replace(**upd)
    return out


def sample_loss(spec, params, s: Sample, features=None):
    X = s.features if features is None else features
    logits, cache = models.model_forward(spec, params, X, s.graph, s.hierarchy)
    loss, dlogits = layers.softmax_cross_entropy(logits, s.targets, s.class_mask)
    return loss, logits, cache, dlogits


def train(spec: models.ModelSpec, params: dict, dataset: Sequence[Sample], cfg: TrainConfig,
          start_epoch: int = 0, rng_state: Optional[dict] = None,
          on_epoch: Optional[Callable[[int, dict], dict]] = None,
          log_path=None, on_checkpoint: Optional[Callable[[TrainResult], None]] = None) -> TrainResult:
    """Train for ``cfg.epochs - start_epoch`` epochs.

    Each epoch visits the samples in a fresh random order. ``on_epoch`` gets
    ``(epoch, params)`` after every epoch and returns extra metrics for the
    log record. Passing ``start_epoch`` and ``rng_state`` from a checkpoint
    resumes a run exactly.
    """
    if not dataset:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.rng_seed)
    if rng_state is not None:
        rng.bit_generator.state = rng_state
    losses, records = [], []
    result = TrainResult(params, losses, records, start_epoch, rng.bit_generator.state)
    for epoch in range(start_epoch, cfg.epochs):
        total = 0.0
        for idx in rng.permutation(len(dataset)):
            s = dataset[idx]
            X = s.features
            if cfg.noise_levels and s.mesh is not None:
                level = cfg.noise_levels[int(rng.integers(len(cfg.noise_levels)))]
                noisy = add_vertex_noise(s.mesh, level, int(rng.integers(2**63)))
                X = X + (noisy.vertices - s.mesh.vertices)
            loss, _, cache, dlogits = sample_loss(spec, params, s, X)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch + 1}")
            grads = models.model_backward(spec, params, cache, dlogits)
            params = sgd_step(params, grads, cfg)
            total += loss
        mean_loss = total / len(dataset)
        losses.append(mean_loss)
        rec = {"epoch": epoch + 1, "loss": mean_loss}
        if on_epoch is not None:
            rec.update(on_epoch(epoch + 1, params))
        records.append(rec)
        logger.debug("epoch %d loss %.6f", epoch + 1, mean_loss)
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        result = TrainResult(params, losses, records, epoch + 1, rng.bit_generator.state)
        if on_checkpoint is not None and cfg.checkpoint_interval and (epoch + 1) % cfg.checkpoint_interval == 0:
            on_checkpoint(result)
    return result
