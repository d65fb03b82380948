"""Built-in synthetic scene generator.

Rooms are boxes of colored planes sampled on a regular grid; colors encode
world position smoothly (so feature-space correspondences are informative)
and normals point inward. Frames are frustum crops along a camera
trajectory, stored in the camera frame with the camera-to-world pose, so
pose-transforming a frame reproduces the world-frame points exactly.

Everything is a pure function of its seed; no external data is required.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, Pose, transform


@dataclass
class SyntheticFrame:
    frame_id: str
    cloud: PointCloud   # camera-frame points
    pose: Pose          # camera-to-world


def rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


def make_room_cloud(size=(8.0, 6.0, 3.0), spacing=0.12, color_phase=0.0) -> PointCloud:
    """World-frame cloud of the six box planes with position-coded colors."""
    w, l, h = size
    planes = [
        # (fixed axis, value, normal)
        (2, 0.0, (0.0, 0.0, 1.0)),    # floor
        (2, h, (0.0, 0.0, -1.0)),     # ceiling
        (1, 0.0, (0.0, 1.0, 0.0)),    # near wall
        (1, l, (0.0, -1.0, 0.0)),     # far wall
        (0, 0.0, (1.0, 0.0, 0.0)),    # left wall
        (0, w, (-1.0, 0.0, 0.0)),     # right wall
    ]
    spans = np.array([w, l, h])
    points = []
    normals = []
    for axis, value, normal in planes:
        free = [a for a in range(3) if a != axis]
        u = np.arange(0.0, spans[free[0]] + spacing / 2, spacing)
        v = np.arange(0.0, spans[free[1]] + spacing / 2, spacing)
        uu, vv = np.meshgrid(u, v, indexing="ij")
        pts = np.zeros((uu.size, 3))
        pts[:, axis] = value
        pts[:, free[0]] = uu.ravel()
        pts[:, free[1]] = vv.ravel()
        points.append(pts)
        normals.append(np.tile(normal, (uu.size, 1)))
    pos = np.vstack(points)
    nrm = np.vstack(normals)
    # smooth unique-ish color per world position
    rel = pos / spans
    colors = np.stack([
        0.05 + 0.9 * ((rel[:, 0] + color_phase) % 1.0),
        0.05 + 0.9 * ((rel[:, 1] + 2 * color_phase) % 1.0),
        0.05 + 0.9 * rel[:, 2],
    ], axis=1)
    return PointCloud.from_parts(np.clip(colors, 0.0, 1.0), pos, nrm)


def frustum_crop(world: PointCloud, pose: Pose, fov_deg: float = 75.0,
                 near: float = 0.3, far: float = 9.0) -> PointCloud | None:
    """Points visible from the camera (view direction +x in camera frame),
    returned in the camera frame. None when too few points fall inside.

    Crops are exact subsets of the world lattice: two frames seeing the
    same region contain bit-identical world points there, which keeps voxel
    overlaps meaningful. Density is controlled by the room's spacing, never
    by thinning crops.
    """
    local = transform(world, pose.inverse())
    p = local.positions
    half = math.tan(math.radians(fov_deg) / 2.0)
    inside = (p[:, 0] > near) & (p[:, 0] < far)
    inside &= np.abs(p[:, 1]) <= half * p[:, 0]
    inside &= np.abs(p[:, 2]) <= half * p[:, 0]
    idx = np.flatnonzero(inside)
    if idx.size < 8:
        return None
    return PointCloud(local.data[idx])


def make_trajectory_scene(scene_id: str, seed: int, n_frames: int = 20,
                          size=(8.0, 6.0, 3.0), spacing: float = 0.2,
                          step: float | None = None) -> list:
    """Frames along a lateral camera path through a room; consecutive frames
    overlap heavily for small steps (database selection will thin them)."""
    rng = np.random.default_rng(seed)
    room = make_room_cloud(size, spacing, color_phase=float(rng.uniform(0, 1)))
    w, l, h = size
    step = step if step is not None else (w - 2.0) / max(n_frames - 1, 1)
    frames = []
    for i in range(n_frames):
        yaw = 0.05 * math.sin(i * 0.7)
        pose = Pose(rotation_z(yaw),
                    [1.0 + i * step, l * 0.5 + 0.1 * math.sin(i * 0.4), h * 0.5])
        cloud = frustum_crop(room, pose)
        if cloud is None:
            continue
        frames.append(SyntheticFrame(f"{scene_id}_f{i:04d}", cloud, pose))
    return frames


def perturb_points(cloud: PointCloud, rng: np.random.Generator, fraction: float = 0.1,
                   sigma: float = 0.01) -> PointCloud:
    """Jitter the positions of a random subset of points (at most the given
    fraction); colors and normals stay untouched."""
    n = cloud.n
    count = int(math.floor(fraction * n))
    data = np.array(cloud.data)
    if count:
        idx = rng.choice(n, size=count, replace=False)
        data[idx, 3:6] += rng.normal(scale=sigma, size=(count, 3))
    return PointCloud(data)


def make_transform_pair_scene(scene_id: str, seed: int, n_keyframes: int = 6,
                              queries_per_keyframe: int = 2,
                              size=(8.0, 6.0, 3.0), spacing: float = 0.2,
                              noise_fraction: float = 0.1,
                              max_angle: float = 0.2, max_shift: float = 0.25) -> tuple:
    """Scene whose queries are rigid-transformed (optionally noised) copies
    of its keyframes, posed so each query lands exactly on its source
    keyframe in the world frame. Returns (keyframes, queries) where each
    query is (SyntheticFrame, source_keyframe_id)."""
    rng = np.random.default_rng(seed)
    room = make_room_cloud(size, spacing, color_phase=float(rng.uniform(0, 1)))
    w, l, h = size
    keyframes = []
    xs = np.linspace(1.2, w - 1.2, n_keyframes)
    for i, x in enumerate(xs):
        yaw = float(rng.uniform(-0.3, 0.3))
        pose = Pose(rotation_z(yaw), [x, l * 0.5, h * 0.5])
        cloud = frustum_crop(room, pose)
        if cloud is None:
            continue
        keyframes.append(SyntheticFrame(f"{scene_id}_k{i:03d}", cloud, pose))

    queries = []
    qn = 0
    for kf in keyframes:
        for _ in range(queries_per_keyframe):
            axis = rng.normal(size=3)
            rot = rotation_from_axis_angle(axis, float(rng.uniform(-max_angle, max_angle)))
            shift = rng.uniform(-max_shift, max_shift, size=3)
            local = Pose(rot, shift)
            cloud = transform(kf.cloud, local)
            if noise_fraction > 0:
                cloud = perturb_points(cloud, rng, fraction=noise_fraction)
            # pose mapping the transformed cloud back onto the keyframe's
            # world points: world = kf.pose(local^-1(p))
            pose = kf.pose.compose(local.inverse())
            queries.append((SyntheticFrame(f"{scene_id}_q{qn:03d}", cloud, pose),
                            kf.frame_id))
            qn += 1
    return keyframes, queries
