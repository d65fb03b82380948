"""Geometric primitives: colorized point clouds, rigid poses, voxel grids,
overlap metrics, deterministic sampling / neighbor search, and rigid alignment.

Conventions
-----------
- A point cloud is an (N, 9) float64 array with columns
  (r, g, b, x, y, z, nx, ny, nz): color in [0, 1], position in meters,
  unit normal (or the all-zero sentinel when no normal is available).
- A pose maps cloud-local coordinates into the world frame:
  p_world = R @ p_local + t.
- All operations here are pure functions of immutable inputs; they are safe
  to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, InvalidArgumentError

COLOR = slice(0, 3)
POSITION = slice(3, 6)
NORMAL = slice(6, 9)

_NORMAL_TOL = 1e-4
_ROTATION_TOL = 1e-6


@dataclass(frozen=True)
class PointCloud:
    """An (N, 9) colorized point cloud. N >= 1, finite values, colors in
    [0, 1], normals unit length within 1e-4 or all-zero."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != 9:
            raise InvalidArgumentError(f"point cloud must be (N, 9), got {data.shape}")
        if data.shape[0] < 1:
            raise InvalidArgumentError("point cloud must contain at least one point")
        if not np.all(np.isfinite(data)):
            raise InvalidArgumentError("point cloud contains non-finite values")
        colors = data[:, COLOR]
        if colors.min() < 0.0 or colors.max() > 1.0:
            raise InvalidArgumentError("colors must lie in [0, 1]")
        norms = np.linalg.norm(data[:, NORMAL], axis=1)
        bad = (np.abs(norms - 1.0) > _NORMAL_TOL) & (norms != 0.0)
        if bad.any():
            raise InvalidArgumentError(
                f"{int(bad.sum())} normals are neither unit length (tol {_NORMAL_TOL}) nor zero"
            )
        data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def colors(self) -> np.ndarray:
        return self.data[:, COLOR]

    @property
    def positions(self) -> np.ndarray:
        return self.data[:, POSITION]

    @property
    def normals(self) -> np.ndarray:
        return self.data[:, NORMAL]

    @staticmethod
    def from_parts(colors, positions, normals=None) -> "PointCloud":
        positions = np.asarray(positions, dtype=np.float64)
        n = positions.shape[0]
        colors = np.broadcast_to(np.asarray(colors, dtype=np.float64), (n, 3))
        if normals is None:
            normals = np.zeros((n, 3))
        normals = np.broadcast_to(np.asarray(normals, dtype=np.float64), (n, 3))
        return PointCloud(np.hstack([colors, positions, normals]))


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: 3x3 rotation (orthonormal, det +1) and translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3):
            raise InvalidArgumentError(f"rotation must be 3x3, got {rot.shape}")
        if not np.all(np.isfinite(rot)) or not np.all(np.isfinite(t)):
            raise InvalidArgumentError("pose contains non-finite values")
        if np.abs(rot @ rot.T - np.eye(3)).max() > _ROTATION_TOL:
            raise InvalidArgumentError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > _ROTATION_TOL:
            raise InvalidArgumentError("rotation determinant is not +1")
        rot = rot.copy()
        t = t.copy()
        rot.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self * other)(p) = self(other(p))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)


@dataclass(frozen=True)
class VoxelGrid:
    """Occupied voxel cells at a fixed resolution; indices are
    floor(coordinate / voxel_size) per axis."""

    voxel_size: float
    occupied: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise InvalidArgumentError("voxel_size must be positive")
        object.__setattr__(self, "occupied", frozenset(self.occupied))


def voxelize(cloud: PointCloud, voxel_size: float) -> VoxelGrid:
    """Quantize point positions into occupied voxel cells.

    Duplicates collapse; the result is independent of point order.
    """
    if voxel_size <= 0:
        raise InvalidArgumentError("voxel_size must be positive")
    idx = np.floor(cloud.positions / voxel_size).astype(np.int64)
    occupied = frozenset(map(tuple, idx.tolist()))
    return VoxelGrid(voxel_size, occupied)


def transform(cloud: PointCloud, pose: Pose) -> PointCloud:
    """Apply a rigid pose: positions rotate and translate, normals rotate,
    colors pass through. Zero-sentinel normals stay zero."""
    data = np.array(cloud.data)
    data[:, POSITION] = cloud.positions @ pose.rotation.T + pose.translation
    data[:, NORMAL] = cloud.normals @ pose.rotation.T
    return PointCloud(data)


def symmetric_frame_overlap(a: PointCloud, b: PointCloud, pose_a: Pose, pose_b: Pose,
                            voxel_size: float) -> float:
    """Voxel-set IoU of the two pose-transformed clouds. Symmetric in (a, b)."""
    va = voxelize(transform(a, pose_a), voxel_size).occupied
    vb = voxelize(transform(b, pose_b), voxel_size).occupied
    union = len(va | vb)
    return len(va & vb) / union


def asymmetric_overlap(query: PointCloud, db: PointCloud, pose_q: Pose, pose_d: Pose,
                       voxel_size: float) -> float:
    """Fraction of the query's voxels covered by the candidate's voxels.

    Equals 1 for a cloud against itself under equal poses; not symmetric
    in general.
    """
    vq = voxelize(transform(query, pose_q), voxel_size).occupied
    vd = voxelize(transform(db, pose_d), voxel_size).occupied
    return len(vq & vd) / len(vq)


def canonical_order(positions: np.ndarray, extra: np.ndarray | None = None) -> np.ndarray:
    """Indices sorting rows lexicographically by (x, y, z), then by the
    optional extra columns, then by original index (lexsort is stable).

    Used to make sampling and row-order-sensitive reductions pure functions
    of the point set rather than of its storage order.
    """
    keys = [positions[:, 2], positions[:, 1], positions[:, 0]]
    if extra is not None:
        keys = [extra[:, c] for c in range(extra.shape[1] - 1, -1, -1)] + keys
    return np.lexsort(keys)


def _lex_rank(positions: np.ndarray) -> np.ndarray:
    """Rank of each row in canonical (x, y, z) order; ties broken by index."""
    order = canonical_order(positions)
    rank = np.empty(len(order), dtype=np.int64)
    rank[order] = np.arange(len(order))
    return rank


def farthest_point_sample(cloud_or_positions, m: int) -> np.ndarray:
    """Greedy max-min subset selection of m point indices.

    Deterministic: the seed is the point farthest from the centroid and each
    step appends the point maximizing the minimum distance to the selected
    set. Ties break by lexicographic (x, y, z), then canonical rank, so the
    selected points do not depend on input row order.
    """
    if isinstance(cloud_or_positions, PointCloud):
        positions = cloud_or_positions.positions
    else:
        positions = np.asarray(cloud_or_positions, dtype=np.float64)
    n = positions.shape[0]
    if not 1 <= m <= n:
        raise InvalidArgumentError(f"m must be in [1, {n}], got {m}")

    rank = _lex_rank(positions)

    def pick(scores: np.ndarray) -> int:
        # max score, ties by smallest canonical rank
        best = scores.max()
        tied = np.flatnonzero(scores >= best)
        return int(tied[np.argmin(rank[tied])])

    centroid = positions.mean(axis=0)
    selected = np.empty(m, dtype=np.int64)
    selected[0] = pick(np.linalg.norm(positions - centroid, axis=1))
    min_dist = np.linalg.norm(positions - positions[selected[0]], axis=1)
    for i in range(1, m):
        selected[i] = pick(min_dist)
        np.minimum(min_dist, np.linalg.norm(positions - positions[selected[i]], axis=1),
                   out=min_dist)
    return selected


def knn(query_positions, base_positions, k: int) -> np.ndarray:
    """Per query row, indices of the k nearest base points by Euclidean
    distance. Ties break by distance, then lexicographic base coordinates,
    then base index. Returns a (|query|, k) int array, nearest first."""
    query = np.atleast_2d(np.asarray(query_positions, dtype=np.float64))
    base = np.atleast_2d(np.asarray(base_positions, dtype=np.float64))
    if k > base.shape[0]:
        raise InvalidArgumentError(f"k={k} exceeds base size {base.shape[0]}")
    if k < 1:
        raise InvalidArgumentError("k must be >= 1")
    rank = _lex_rank(base)
    d2 = np.square(query[:, None, :] - base[None, :, :]).sum(axis=2)
    out = np.empty((query.shape[0], k), dtype=np.int64)
    for row in range(query.shape[0]):
        order = np.lexsort((rank, d2[row]))
        out[row] = order[:k]
    return out


def kabsch_align(src, dst) -> Pose:
    """Least-squares rigid transform mapping src onto dst
    (minimizes sum ||R s_i + t - d_i||^2), reflection-corrected.

    Requires >= 3 correspondences that are not all collinear.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise InvalidArgumentError(f"shape mismatch: {src.shape} vs {dst.shape}")
    if src.shape[0] < 3:
        raise InvalidArgumentError("need at least 3 correspondences")

    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    h = (src - c_src).T @ (dst - c_dst)
    u, s, vt = np.linalg.svd(h)
    # rank < 2 leaves a rotation about the degenerate axis unconstrained
    if s[1] <= 1e-9 * max(s[0], 1e-30):
        raise DegenerateGeometryError("correspondences are coincident or collinear")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = c_dst - rot @ c_src
    return Pose(rot, t)


def cloud_diameter(cloud: PointCloud) -> float:
    """Diameter of the positions' axis-aligned bounding box (cheap upper
    proxy for the true diameter; used only as a scale normalizer)."""
    span = cloud.positions.max(axis=0) - cloud.positions.min(axis=0)
    return float(np.linalg.norm(span))
