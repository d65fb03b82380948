"""Point-cloud feature extractor producing per-point features and a global
descriptor.

Each layer downsamples the working set by farthest point sampling, runs a
simplified point convolution (concatenate each KNN neighbor's features with
its relative position offset, shared linear map, max-pool over neighbors),
then a context-cluster block that groups points around FPS centers by
sigmoid-cosine similarity, aggregates member features into the centers, and
dispatches the enhanced center feature back onto its member points. A final
per-point linear map max-pooled over all points yields the descriptor.

The default configuration uses feature dims 64/128/320/512 with point counts
800/300/100/40, center counts 300/100/40/20, convolution KNN sizes
98/50/20/10, and clustering KNN sizes 50/20/10/10; per-point features for
reranking are tapped after the 128-dim layer (300 rows x 128).

Input rows are canonicalized before any processing, so the descriptor is
bit-identical under permutations of the input points. It is not invariant to
rigid motion: absolute positions are part of the features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NumericError
from .geometry import PointCloud, canonical_order, farthest_point_sample, knn
from .kernels import (FeatureMatrix, LinearLayer, cosine_similarity_matrix,
                      init_linear, sigmoid)


@dataclass(frozen=True)
class LayerConfig:
    feature_dim: int
    points_out: int
    centers: int
    knn_k: int
    cluster_knn: int

    def __post_init__(self):
        for name in ("feature_dim", "points_out", "centers", "knn_k", "cluster_knn"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"layer {name} must be positive")


@dataclass(frozen=True)
class ExtractorConfig:
    layers: tuple
    descriptor_dim: int
    rerank_layer: int = 1  # 0-based layer whose output feeds reranking

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise InvalidArgumentError("extractor needs at least one layer")
        if self.descriptor_dim < 1:
            raise InvalidArgumentError("descriptor_dim must be positive")
        counts = [l.points_out for l in self.layers]
        if any(a < b for a, b in zip(counts, counts[1:])):
            raise InvalidArgumentError(f"point counts must be nonincreasing, got {counts}")
        if not 0 <= self.rerank_layer < len(self.layers):
            raise InvalidArgumentError(f"rerank_layer {self.rerank_layer} out of range")

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"feature_dim": l.feature_dim, "points_out": l.points_out,
                 "centers": l.centers, "knn_k": l.knn_k, "cluster_knn": l.cluster_knn}
                for l in self.layers
            ],
            "descriptor_dim": self.descriptor_dim,
            "rerank_layer": self.rerank_layer,
        }

    @staticmethod
    def from_dict(d: dict) -> "ExtractorConfig":
        return ExtractorConfig(
            layers=tuple(LayerConfig(**l) for l in d["layers"]),
            descriptor_dim=d["descriptor_dim"],
            rerank_layer=d.get("rerank_layer", 1),
        )


def default_extractor_config() -> ExtractorConfig:
    return ExtractorConfig(
        layers=(
            LayerConfig(64, 800, 300, 98, 50),
            LayerConfig(128, 300, 100, 50, 20),
            LayerConfig(320, 100, 40, 20, 10),
            LayerConfig(512, 40, 20, 10, 10),
        ),
        descriptor_dim=512,
        rerank_layer=1,
    )


def tiny_extractor_config(dims=(16, 32), points=(64, 24), centers=(16, 8),
                          knn_k=(8, 6), cluster_knn=(6, 4), descriptor_dim=32,
                          rerank_layer=1) -> ExtractorConfig:
    """Small configuration for tests and the bundled toy pipeline."""
    layers = tuple(LayerConfig(d, p, c, k, ck)
                   for d, p, c, k, ck in zip(dims, points, centers, knn_k, cluster_knn))
    return ExtractorConfig(layers=layers, descriptor_dim=descriptor_dim,
                           rerank_layer=rerank_layer)


@dataclass
class ExtractorLayerParams:
    conv: LinearLayer
    alpha: float
    beta: float


@dataclass
class ExtractorParams:
    layers: list = field(default_factory=list)
    head: LinearLayer = None
    seed: int = 0


def init_extractor_params(config: ExtractorConfig, seed: int = 0,
                          in_dim: int = 9) -> ExtractorParams:
    rng = np.random.default_rng(seed)
    layers = []
    prev = in_dim
    for layer in config.layers:
        layers.append(ExtractorLayerParams(
            conv=init_linear(prev + 3, layer.feature_dim, rng), alpha=1.0, beta=0.0))
        prev = layer.feature_dim
    head = init_linear(prev, config.descriptor_dim, rng)
    return ExtractorParams(layers=layers, head=head, seed=seed)


def _point_conv(feats: np.ndarray, pos: np.ndarray, layer: LinearLayer, k: int) -> np.ndarray:
    """Per point: concat each KNN neighbor's features with its offset, apply
    the shared linear map, max-pool over the neighbors."""
    neighbors = knn(pos, pos, k)                          # (N, k)
    nb_feats = feats[neighbors]                           # (N, k, D)
    offsets = pos[neighbors] - pos[:, None, :]            # (N, k, 3)
    stacked = np.concatenate([nb_feats, offsets], axis=2)
    projected = stacked @ layer.weight.T + layer.bias     # (N, k, D_out)
    return projected.max(axis=1)


def _context_cluster(feats: np.ndarray, pos: np.ndarray, num_centers: int,
                     cluster_knn: int, alpha: float, beta: float) -> np.ndarray:
    """Cluster-and-dispatch: aggregate member point features into FPS
    centers weighted by kept similarities, then add each point's enhanced
    center feature back onto it."""
    n = feats.shape[0]
    m = min(num_centers, n)
    k = min(cluster_knn, n)
    center_idx = farthest_point_sample(pos, m)
    members = knn(pos[center_idx], pos, k)
    f_c = feats[members].mean(axis=1)

    cos = cosine_similarity_matrix(f_c, feats)
    sim = sigmoid(alpha * cos + beta)
    best = sim.argmax(axis=0)
    mask = np.zeros_like(sim)
    mask[best, np.arange(n)] = 1.0
    sim_kept = sim * mask

    weight = 1.0 + sim_kept.sum(axis=1)
    enhanced = (f_c + sim_kept @ feats) / weight[:, None]
    return feats + enhanced[best]


def extract_features(cloud: PointCloud, config: ExtractorConfig,
                     params: ExtractorParams) -> tuple:
    """Run the layer stack; returns (point_features, descriptor).

    point_features is the FeatureMatrix tapped at config.rerank_layer;
    the descriptor is the max-pool of the final per-point projection.
    """
    final_points = config.layers[-1].points_out
    if cloud.n < final_points:
        raise InvalidArgumentError(
            f"cloud has {cloud.n} points, extractor needs at least {final_points}")
    if len(params.layers) != len(config.layers):
        raise InvalidArgumentError("parameter bundle does not match the configuration")

    order = canonical_order(cloud.positions,
                            extra=np.hstack([cloud.colors, cloud.normals]))
    feats = cloud.data[order]
    pos = cloud.positions[order]

    rerank_feats = None
    for i, (layer_cfg, layer_par) in enumerate(zip(config.layers, params.layers)):
        m = min(layer_cfg.points_out, feats.shape[0])
        sel = farthest_point_sample(pos, m)
        feats = feats[sel]
        pos = pos[sel]
        feats = _point_conv(feats, pos, layer_par.conv,
                            min(layer_cfg.knn_k, feats.shape[0]))
        feats = _context_cluster(feats, pos, layer_cfg.centers, layer_cfg.cluster_knn,
                                 layer_par.alpha, layer_par.beta)
        if i == config.rerank_layer:
            rerank_feats = FeatureMatrix(feats.copy(), pos.copy())

    descriptor = (feats @ params.head.weight.T + params.head.bias).max(axis=0)
    if not np.all(np.isfinite(descriptor)):
        raise NumericError("descriptor contains non-finite values")
    if not descriptor.any():
        raise NumericError("descriptor is all-zero")
    return rerank_feats, descriptor
