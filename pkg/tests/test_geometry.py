import numpy as np
import pytest

from placerec.errors import DegenerateGeometryError, InvalidArgumentError
from placerec.geometry import (PointCloud, Pose, asymmetric_overlap, farthest_point_sample,
                               kabsch_align, knn, symmetric_frame_overlap, transform,
                               voxelize)


def cloud_at(positions, colors=0.5, normals=None):
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    return PointCloud.from_parts(colors, positions, normals)


def cloud_from_voxels(cells, voxel_size=0.1):
    """One point at the center of each requested voxel cell."""
    centers = (np.asarray(cells, dtype=float) + 0.5) * voxel_size
    return cloud_at(centers)


def random_cloud(rng, n, scale=2.0):
    pos = rng.uniform(-scale, scale, size=(n, 3))
    colors = rng.uniform(0, 1, size=(n, 3))
    normals = rng.normal(size=(n, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud.from_parts(colors, pos, normals)


def random_pose(rng, max_angle=np.pi, max_shift=1.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-max_angle, max_angle)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    rot = np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
    return Pose(rot, rng.uniform(-max_shift, max_shift, size=3))


class TestPointCloudInvariants:
    def test_rejects_empty(self):
        with pytest.raises(InvalidArgumentError):
            PointCloud(np.zeros((0, 9)))

    def test_rejects_bad_colors(self):
        data = np.zeros((1, 9))
        data[0, 0] = 1.5
        with pytest.raises(InvalidArgumentError):
            PointCloud(data)

    def test_rejects_non_unit_normals(self):
        data = np.zeros((1, 9))
        data[0, 6] = 0.5
        with pytest.raises(InvalidArgumentError):
            PointCloud(data)

    def test_zero_normal_sentinel_ok(self):
        PointCloud(np.zeros((3, 9)))

    def test_rejects_non_finite(self):
        data = np.zeros((1, 9))
        data[0, 3] = np.nan
        with pytest.raises(InvalidArgumentError):
            PointCloud(data)


class TestPose:
    def test_rejects_reflection(self):
        with pytest.raises(InvalidArgumentError):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_inverse_compose_is_identity(self):
        rng = np.random.default_rng(1)
        pose = random_pose(rng)
        ident = pose.compose(pose.inverse())
        assert np.allclose(ident.rotation, np.eye(3), atol=1e-12)
        assert np.allclose(ident.translation, 0, atol=1e-12)


class TestVoxelize:
    def test_single_point(self):
        grid = voxelize(cloud_at([[0.05, 0.05, 0.05]]), 0.1)
        assert grid.occupied == {(0, 0, 0)}

    def test_negative_coordinates_floor(self):
        grid = voxelize(cloud_at([[-0.05, -0.15, 0.05]]), 0.1)
        assert grid.occupied == {(-1, -2, 0)}

    def test_lattice_matches_bruteforce(self):
        # 3000 random points on a 0.1 m lattice: occupancy equals the
        # brute-force set of floored triples
        rng = np.random.default_rng(0)
        pts = rng.integers(-10, 10, size=(3000, 3)) * 0.1 + 0.05
        grid = voxelize(cloud_at(pts), 0.1)
        oracle = set()
        for p in pts:
            oracle.add(tuple(int(np.floor(c / 0.1)) for c in p))
        assert grid.occupied == oracle

    def test_nonempty(self):
        assert len(voxelize(cloud_at([[0, 0, 0]]), 0.5).occupied) >= 1

    def test_rejects_nonpositive_size(self):
        with pytest.raises(InvalidArgumentError):
            voxelize(cloud_at([[0, 0, 0]]), 0.0)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(3)
        cloud = random_cloud(rng, 50)
        perm = rng.permutation(50)
        shuffled = PointCloud(cloud.data[perm])
        assert voxelize(cloud, 0.1).occupied == voxelize(shuffled, 0.1).occupied


class TestOverlaps:
    def test_identical_symmetric_is_one(self):
        rng = np.random.default_rng(4)
        cloud = random_cloud(rng, 30)
        pose = random_pose(rng)
        assert symmetric_frame_overlap(cloud, cloud, pose, pose, 0.1) == 1.0

    def test_disjoint_is_zero(self):
        a = cloud_at([[0, 0, 0], [0.5, 0, 0]])
        b = cloud_at([[100, 0, 0], [100.5, 0, 0]])
        ident = Pose.identity()
        assert symmetric_frame_overlap(a, b, ident, ident, 0.1) == 0.0
        assert asymmetric_overlap(a, b, ident, ident, 0.1) == 0.0

    def test_hand_enumerated_iou(self):
        # 10 cells each, sharing 4 of 16 total -> IoU 0.25
        cells_a = [(i, 0, 0) for i in range(10)]
        cells_b = [(i, 0, 0) for i in range(6, 16)]
        a = cloud_from_voxels(cells_a)
        b = cloud_from_voxels(cells_b)
        ident = Pose.identity()
        got = symmetric_frame_overlap(a, b, ident, ident, 0.1)
        assert got == pytest.approx(4 / 16)
        assert got == symmetric_frame_overlap(b, a, ident, ident, 0.1)

    def test_hand_enumerated_asymmetric(self):
        # query has 8 cells, 2 shared -> 0.25
        q = cloud_from_voxels([(i, 0, 0) for i in range(8)])
        d = cloud_from_voxels([(i, 5, 0) for i in range(20)] + [(0, 0, 0), (1, 0, 0)])
        got = asymmetric_overlap(q, d, Pose.identity(), Pose.identity(), 0.1)
        assert got == pytest.approx(2 / 8)

    def test_query_subset_gives_one(self):
        q = cloud_from_voxels([(0, 0, 0), (1, 0, 0)])
        d = cloud_from_voxels([(i, 0, 0) for i in range(5)])
        assert asymmetric_overlap(q, d, Pose.identity(), Pose.identity(), 0.1) == 1.0

    def test_self_overlap_exact_one(self):
        rng = np.random.default_rng(5)
        cloud = random_cloud(rng, 40)
        pose = random_pose(rng)
        assert asymmetric_overlap(cloud, cloud, pose, pose, 0.1) == 1.0

    def test_randomized_oracle(self):
        # overlap ops vs a brute-force voxel-set oracle
        rng = np.random.default_rng(6)
        ident = Pose.identity()
        for _ in range(50):
            a = random_cloud(rng, int(rng.integers(1, 60)))
            b = random_cloud(rng, int(rng.integers(1, 60)))
            vs = float(rng.uniform(0.05, 0.5))
            va = {tuple(int(np.floor(c / vs)) for c in p) for p in a.positions}
            vb = {tuple(int(np.floor(c / vs)) for c in p) for p in b.positions}
            assert symmetric_frame_overlap(a, b, ident, ident, vs) == pytest.approx(
                len(va & vb) / len(va | vb))
            assert asymmetric_overlap(a, b, ident, ident, vs) == pytest.approx(
                len(va & vb) / len(va))


class TestTransform:
    def test_identity(self):
        rng = np.random.default_rng(7)
        cloud = random_cloud(rng, 10)
        assert np.array_equal(transform(cloud, Pose.identity()).data, cloud.data)

    def test_pure_translation(self):
        cloud = random_cloud(np.random.default_rng(8), 10)
        moved = transform(cloud, Pose(np.eye(3), [1.0, 0.0, 0.0]))
        assert np.allclose(moved.positions[:, 0], cloud.positions[:, 0] + 1.0)
        assert np.array_equal(moved.normals, cloud.normals)
        assert np.array_equal(moved.colors, cloud.colors)

    def test_z_rotation(self):
        cloud = cloud_at([[1.0, 0.0, 0.0]])
        rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        moved = transform(cloud, Pose(rot, np.zeros(3)))
        assert np.allclose(moved.positions[0], [0.0, 1.0, 0.0], atol=1e-9)


def fps_oracle(positions, m):
    """Brute-force greedy max-min selection with the documented tie-break."""
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    order = np.lexsort((positions[:, 2], positions[:, 1], positions[:, 0]))
    rank = np.empty(n, dtype=int)
    rank[order] = np.arange(n)

    def best(scores):
        pairs = sorted(range(n), key=lambda i: (-scores[i], rank[i]))
        return pairs[0]

    centroid = positions.mean(axis=0)
    chosen = [best([np.linalg.norm(p - centroid) for p in positions])]
    for _ in range(m - 1):
        scores = [min(np.linalg.norm(positions[i] - positions[c]) for c in chosen)
                  for i in range(n)]
        chosen.append(best(scores))
    return chosen


class TestFarthestPointSample:
    def test_m_equals_n(self):
        cloud = random_cloud(np.random.default_rng(9), 7)
        assert sorted(farthest_point_sample(cloud, 7)) == list(range(7))

    def test_unit_square_diagonal(self):
        corners = cloud_at([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]])
        picked = farthest_point_sample(corners, 2)
        pts = corners.positions[picked]
        # exhaustive check: the diagonal pairs are the unique max-min pairs
        assert np.linalg.norm(pts[0] - pts[1]) == pytest.approx(np.sqrt(2))

    def test_collinear_extremes(self):
        cloud = cloud_at([[0, 0, 0], [1, 0, 0], [2, 0, 0], [10, 0, 0]])
        assert set(farthest_point_sample(cloud, 2)) == {0, 3}

    def test_rejects_m_too_large(self):
        with pytest.raises(InvalidArgumentError):
            farthest_point_sample(cloud_at([[0, 0, 0]]), 2)

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            n = int(rng.integers(1, 13))
            pos = rng.uniform(-1, 1, size=(n, 3))
            m = int(rng.integers(1, n + 1))
            got = farthest_point_sample(pos, m)
            assert list(got) == fps_oracle(pos, m)

    def test_permutation_invariant_points(self):
        rng = np.random.default_rng(11)
        pos = rng.uniform(-1, 1, size=(20, 3))
        sel = farthest_point_sample(pos, 8)
        perm = rng.permutation(20)
        sel_p = farthest_point_sample(pos[perm], 8)
        assert np.array_equal(pos[sel], pos[perm][sel_p])


def knn_oracle(query, base, k):
    """Full sort per query row by (distance, lexicographic coords, index)."""
    out = []
    for qp in np.atleast_2d(query):
        keyed = sorted(
            range(len(base)),
            key=lambda j: (np.sum((np.asarray(base[j]) - qp) ** 2),
                           base[j][0], base[j][1], base[j][2], j))
        out.append(keyed[:k])
    return np.array(out)


class TestKnn:
    def test_self_is_nearest(self):
        rng = np.random.default_rng(12)
        pos = rng.uniform(-1, 1, size=(15, 3))
        idx = knn(pos, pos, 1)
        assert np.array_equal(idx[:, 0], np.arange(15))

    def test_one_dimensional_hand_case(self):
        base = np.array([[0.0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]])
        idx = knn(np.array([[0.9, 0, 0]]), base, 2)
        assert list(idx[0]) == [1, 0]

    def test_k_equals_base_size(self):
        rng = np.random.default_rng(13)
        base = rng.uniform(-1, 1, size=(6, 3))
        idx = knn(np.zeros((1, 3)), base, 6)
        d = np.linalg.norm(base[idx[0]], axis=1)
        assert np.all(np.diff(d) >= 0)
        assert sorted(idx[0]) == list(range(6))

    def test_rejects_k_too_large(self):
        with pytest.raises(InvalidArgumentError):
            knn(np.zeros((1, 3)), np.zeros((2, 3)), 3)

    def test_matches_full_sort_oracle(self):
        rng = np.random.default_rng(14)
        for _ in range(40):
            nb = int(rng.integers(1, 201))
            nq = int(rng.integers(1, 20))
            base = rng.uniform(-1, 1, size=(nb, 3))
            query = rng.uniform(-1, 1, size=(nq, 3))
            k = int(rng.integers(1, nb + 1))
            assert np.array_equal(knn(query, base, k), knn_oracle(query, base, k))


class TestKabschAlign:
    def test_identity_recovery(self):
        rng = np.random.default_rng(15)
        pts = rng.uniform(-1, 1, size=(20, 3))
        pose = kabsch_align(pts, pts)
        assert np.allclose(pose.rotation, np.eye(3), atol=1e-9)
        assert np.allclose(pose.translation, 0, atol=1e-9)

    def test_exact_recovery(self):
        rng = np.random.default_rng(16)
        pts = rng.uniform(-1, 1, size=(30, 3))
        truth = random_pose(rng)
        moved = pts @ truth.rotation.T + truth.translation
        got = kabsch_align(pts, moved)
        assert np.linalg.norm(got.rotation - truth.rotation) < 1e-6
        assert np.linalg.norm(got.translation - truth.translation) < 1e-6

    def test_noisy_recovery_residual(self):
        # Monte-Carlo: residual RMS after alignment stays within 3 sigma
        rng = np.random.default_rng(17)
        sigma = 0.01
        for _ in range(20):
            pts = rng.uniform(-1, 1, size=(50, 3))
            truth = random_pose(rng)
            moved = pts @ truth.rotation.T + truth.translation
            moved += rng.normal(scale=sigma, size=moved.shape)
            got = kabsch_align(pts, moved)
            residual = pts @ got.rotation.T + got.translation - moved
            rms = np.sqrt(np.mean(np.sum(residual ** 2, axis=1)))
            assert rms <= 3 * sigma

    def test_rejects_collinear(self):
        pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0]])
        with pytest.raises(DegenerateGeometryError):
            kabsch_align(pts, pts)

    def test_rejects_coincident(self):
        pts = np.zeros((5, 3))
        with pytest.raises(DegenerateGeometryError):
            kabsch_align(pts, pts + 1.0)

    def test_rejects_too_few(self):
        with pytest.raises(InvalidArgumentError):
            kabsch_align(np.zeros((2, 3)), np.zeros((2, 3)))
