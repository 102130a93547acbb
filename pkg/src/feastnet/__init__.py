"""Feature-steered graph convolutions for 3D shape analysis, in numpy."""

from .conv import FeaStConvParams, MahalanobisParams, compute_assignments, forward, backward
from .graph import Graph, Mesh, knn_graph, load_off, one_ring
from .coarsening import CoarseningHierarchy, build_hierarchy
from .models import ModelSpec, build_multi_scale, build_part_labeler, build_single_scale
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "FeaStConvParams", "MahalanobisParams", "compute_assignments", "forward", "backward",
    "Graph", "Mesh", "knn_graph", "load_off", "one_ring",
    "CoarseningHierarchy", "build_hierarchy",
    "ModelSpec", "build_multi_scale", "build_part_labeler", "build_single_scale",
    "TrainConfig", "train",
]
