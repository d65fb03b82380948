"""Dense feature kernels: linear / group-norm primitives, cosine similarity,
and the two cluster kernels used for reranking.

scc_forward aggregates a frame's point features into enhanced center
features (self context clustering); cscc_forward correlates two frames'
center features and aggregates the top correlated pairs into a scalar
reranking score.

Everything runs in float64. Forward passes are pure given the parameter
bundles; bundles are never mutated after construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .geometry import canonical_order, farthest_point_sample, knn


def sigmoid(x):
    """Numerically safe logistic function, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class FeatureMatrix:
    """Per-point feature rows plus their 3-D positions (rows align 1:1)."""

    values: np.ndarray    # (rows, dim)
    positions: np.ndarray  # (rows, 3)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.values.ndim != 2 or self.positions.shape != (self.values.shape[0], 3):
            raise InvalidArgumentError(
                f"feature rows {self.values.shape} do not align with positions "
                f"{self.positions.shape}")
        if not (np.all(np.isfinite(self.values)) and np.all(np.isfinite(self.positions))):
            raise InvalidArgumentError("feature matrix contains non-finite values")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


class CenterFeatures(FeatureMatrix):
    """Per-center feature rows (output of clustering); same layout as
    FeatureMatrix with rows = number of centers."""

    @property
    def centers(self) -> int:
        return self.rows


@dataclass
class LinearLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2 or self.bias.shape[0] != self.weight.shape[0]:
            raise InvalidArgumentError(
                f"bias {self.bias.shape} does not match weight {self.weight.shape}")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise InvalidArgumentError("linear layer contains non-finite values")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


def init_linear(in_dim: int, out_dim: int, rng: np.random.Generator) -> LinearLayer:
    """Uniform +-sqrt(1/fan_in) initialization."""
    bound = np.sqrt(1.0 / in_dim)
    return LinearLayer(rng.uniform(-bound, bound, size=(out_dim, in_dim)),
                       rng.uniform(-bound, bound, size=out_dim))


@dataclass
class GroupNormParams:
    num_groups: int
    gamma: np.ndarray
    beta_shift: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64).reshape(-1)
        self.beta_shift = np.asarray(self.beta_shift, dtype=np.float64).reshape(-1)
        if self.epsilon <= 0:
            raise InvalidArgumentError("epsilon must be positive")
        if self.gamma.shape != self.beta_shift.shape:
            raise InvalidArgumentError("gamma and beta_shift must have equal length")
        if self.gamma.shape[0] % self.num_groups != 0:
            raise InvalidArgumentError(
                f"dim {self.gamma.shape[0]} not divisible by {self.num_groups} groups")


def init_group_norm(dim: int, num_groups: int, epsilon: float = 1e-5) -> GroupNormParams:
    return GroupNormParams(num_groups, np.ones(dim), np.zeros(dim), epsilon)


@dataclass
class SCCParams:
    """Self-cluster parameters: reference/source projections with group
    norms, the output projection, a sigmoid-similarity (alpha, beta) pair,
    and the clustering geometry (center count, per-center neighbor count)."""

    l_r: LinearLayer
    l_s: LinearLayer
    l_c: LinearLayer
    gn_r: GroupNormParams
    gn_s: GroupNormParams
    alpha: float
    beta: float
    num_centers: int
    knn_k: int

    def __post_init__(self):
        if self.l_r.out_dim != self.l_s.out_dim:
            raise InvalidArgumentError("l_r and l_s must share their output dim")
        if self.l_c.in_dim != self.l_r.out_dim:
            raise InvalidArgumentError("l_c input dim must equal the projection dim")


@dataclass
class CSCCParams:
    """Cross-cluster parameters: (alpha, beta) for the correlation matrix,
    the pair projection l_c over concatenated center features, the scoring
    layer l_f (output 1), and the number of correlated pairs kept."""

    alpha: float
    beta: float
    l_c: LinearLayer
    l_f: LinearLayer
    top_k: int = 500

    def __post_init__(self):
        if self.l_f.out_dim != 1:
            raise InvalidArgumentError("l_f must produce a scalar")
        if self.l_f.in_dim != self.l_c.out_dim:
            raise InvalidArgumentError("l_f input dim must equal l_c output dim")
        if self.l_c.in_dim % 2 != 0:
            raise InvalidArgumentError("l_c input dim must be even (two concatenated features)")


def default_scc_params(point_dim: int = 128, proj_dim: int | None = None,
                       center_dim: int = 256, num_centers: int = 100,
                       point_count: int = 300, num_groups: int = 4,
                       seed: int = 0) -> SCCParams:
    """Seeded bundle with the default reranking shapes (300x128 point
    features clustered into 100 centers of dim 256). knn_k defaults to three
    times the mean cluster population, capped at the point count."""
    proj_dim = point_dim if proj_dim is None else proj_dim
    rng = np.random.default_rng(seed)
    knn_k = min(point_count, max(1, 3 * (point_count // max(num_centers, 1))))
    return SCCParams(
        l_r=init_linear(point_dim, proj_dim, rng),
        l_s=init_linear(point_dim, proj_dim, rng),
        l_c=init_linear(proj_dim, center_dim, rng),
        gn_r=init_group_norm(proj_dim, num_groups),
        gn_s=init_group_norm(proj_dim, num_groups),
        alpha=1.0,
        beta=0.0,
        num_centers=num_centers,
        knn_k=knn_k,
    )


def default_cscc_params(center_dim: int = 256, pair_dim: int = 256, top_k: int = 500,
                        seed: int = 0) -> CSCCParams:
    rng = np.random.default_rng(seed)
    return CSCCParams(
        alpha=1.0,
        beta=0.0,
        l_c=init_linear(2 * center_dim, pair_dim, rng),
        l_f=init_linear(pair_dim, 1, rng),
        top_k=top_k,
    )


def linear(layer: LinearLayer, x: FeatureMatrix) -> FeatureMatrix:
    """Affine map per row; positions pass through."""
    if layer.in_dim != x.dim:
        raise InvalidArgumentError(f"layer expects dim {layer.in_dim}, got {x.dim}")
    return FeatureMatrix(x.values @ layer.weight.T + layer.bias, x.positions)


def group_norm(p: GroupNormParams, x: FeatureMatrix) -> FeatureMatrix:
    """Per-row group normalization: each row is normalized independently,
    group by group, then scaled by gamma and shifted."""
    if x.dim % p.num_groups != 0:
        raise InvalidArgumentError(f"dim {x.dim} not divisible by {p.num_groups} groups")
    if p.gamma.shape[0] != x.dim:
        raise InvalidArgumentError(f"gamma has dim {p.gamma.shape[0]}, features {x.dim}")
    vals = _group_norm_values(p, x.values)
    return FeatureMatrix(vals, x.positions)


def _group_norm_values(p: GroupNormParams, values: np.ndarray) -> np.ndarray:
    n, d = values.shape
    grouped = values.reshape(n, p.num_groups, d // p.num_groups)
    mean = grouped.mean(axis=2, keepdims=True)
    var = grouped.var(axis=2, keepdims=True)
    x_hat = (grouped - mean) / np.sqrt(var + p.epsilon)
    return x_hat.reshape(n, d) * p.gamma + p.beta_shift


def cosine_similarity_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity, (M, D) x (N, D) -> (M, N) in [-1, 1].
    Zero-norm rows yield 0 entries by convention rather than NaN."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise InvalidArgumentError(f"dim mismatch: {a.shape[1]} vs {b.shape[1]}")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = np.outer(na, nb)
    out = np.zeros((a.shape[0], b.shape[0]))
    np.divide(a @ b.T, denom, out=out, where=denom > 0)
    return out


def global_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two global descriptors."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"descriptor dims differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise InvalidArgumentError("zero-norm descriptor")
    return float(a @ b / (na * nb))


def scc_forward(points: FeatureMatrix, params: SCCParams, cache: dict | None = None
                ) -> CenterFeatures:
    """Aggregate point features into enhanced center features.

    Pipeline: project the points into a reference and a source branch (each
    linear + group norm), pick centers by farthest point sampling, seed each
    center with the mean of its knn_k nearest points' features, compute the
    sigmoid-cosine similarity matrix between reference center and point
    features, keep only each point's best center, and fold the source point
    features into the centers normalized by the kept similarities. The
    result passes through the output projection.

    The input rows are put in canonical order first, so the output is
    bit-identical under any permutation of the input rows.

    When ``cache`` is supplied the intermediate tensors needed for
    backpropagation are stored into it.
    """
    if points.rows < params.num_centers:
        raise InvalidArgumentError(
            f"{params.num_centers} centers requested from {points.rows} points")
    if params.knn_k > points.rows:
        raise InvalidArgumentError(f"knn_k {params.knn_k} exceeds {points.rows} points")
    if params.l_r.in_dim != points.dim:
        raise InvalidArgumentError(
            f"projection expects dim {params.l_r.in_dim}, got {points.dim}")

    order = canonical_order(points.positions, extra=points.values)
    pos = points.positions[order]
    val = points.values[order]

    f_p_r = _group_norm_values(params.gn_r, val @ params.l_r.weight.T + params.l_r.bias)
    f_p_s = _group_norm_values(params.gn_s, val @ params.l_s.weight.T + params.l_s.bias)

    center_idx = farthest_point_sample(pos, params.num_centers)
    center_pos = pos[center_idx]
    members = knn(center_pos, pos, params.knn_k)             # (M, k)
    f_c_r = f_p_r[members].mean(axis=1)
    f_c_s = f_p_s[members].mean(axis=1)

    cos = cosine_similarity_matrix(f_c_r, f_p_r)             # (M, N)
    sim = sigmoid(params.alpha * cos + params.beta)

    # keep each point's single best center (argmax takes the lowest index on ties)
    best = sim.argmax(axis=0)
    mask = np.zeros_like(sim)
    mask[best, np.arange(sim.shape[1])] = 1.0
    sim_kept = sim * mask

    weight = 1.0 + sim_kept.sum(axis=1)                      # (M,)
    f_tilde = (f_c_s + sim_kept @ f_p_s) / weight[:, None]
    out = f_tilde @ params.l_c.weight.T + params.l_c.bias

    if cache is not None:
        cache.update(order=order, val=val, pos=pos, f_p_r=f_p_r, f_p_s=f_p_s,
                     center_idx=center_idx, members=members, f_c_r=f_c_r, f_c_s=f_c_s,
                     cos=cos, sim=sim, mask=mask, sim_kept=sim_kept, weight=weight,
                     f_tilde=f_tilde)
    return CenterFeatures(out, center_pos)


def cscc_forward(q: CenterFeatures, d: CenterFeatures, params: CSCCParams,
                 cache: dict | None = None) -> float:
    """Correlate two frames' center features into a reranking score in (0, 1).

    The sigmoid-cosine correlation matrix is thresholded to its top_k
    entries (ties at the cut resolve in row-major order). Each kept pair
    contributes the pair projection of its correlation-scaled concatenated
    features; masked pairs contribute exact zeros (no bias). The kept
    contributions are normalized per database column, summed, normalized by
    the mean row mass, and scored by the final layer.
    """
    if q.dim != d.dim:
        raise InvalidArgumentError(f"center dims differ: {q.dim} vs {d.dim}")
    if params.l_c.in_dim != 2 * q.dim:
        raise InvalidArgumentError(
            f"pair projection expects dim {params.l_c.in_dim}, got {2 * q.dim}")
    m_q, m_d = q.rows, d.rows

    cos = cosine_similarity_matrix(q.values, d.values)
    corr = sigmoid(params.alpha * cos + params.beta)

    k_eff = min(params.top_k, corr.size)
    flat_order = np.argsort(-corr.reshape(-1), kind="stable")
    kept_flat = np.sort(flat_order[:k_eff])
    kept_i, kept_j = np.unravel_index(kept_flat, corr.shape)
    corr_kept = corr[kept_i, kept_j]

    pair_feats = np.concatenate([q.values[kept_i], d.values[kept_j]], axis=1)
    scaled = corr_kept[:, None] * pair_feats
    f_hat = scaled @ params.l_c.weight.T + params.l_c.bias   # (K, Df)

    col_feat = np.zeros((m_d, params.l_c.out_dim))
    np.add.at(col_feat, kept_j, f_hat)
    col_mass = np.zeros(m_d)
    np.add.at(col_mass, kept_j, corr_kept)                   # c_m per database column
    inner = col_feat / (1.0 + col_mass)[:, None]
    row_mass_mean = corr_kept.sum() / m_q                    # c_n
    f_agg = inner.sum(axis=0) / (1.0 + row_mass_mean)

    z = float(f_agg @ params.l_f.weight[0] + params.l_f.bias[0])
    score = float(sigmoid(z))

    if cache is not None:
        cache.update(cos=cos, corr=corr, kept_i=kept_i, kept_j=kept_j,
                     corr_kept=corr_kept, pair_feats=pair_feats, f_hat=f_hat,
                     col_mass=col_mass, inner=inner, row_mass_mean=row_mass_mean,
                     f_agg=f_agg, z=z, score=score, m_q=m_q, m_d=m_d)
    return score
