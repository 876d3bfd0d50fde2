import numpy as np
import pytest
from scipy.spatial import cKDTree

from gslift.deform import identity_dynamic_scene
from gslift.errors import InputError
from gslift.metrics import (
    EmbeddingSet,
    MetricReport,
    clip_temporal_score,
    clip_text_score,
    compute_report,
    displacement,
    isometry,
    momentum,
    rank_reports,
    rigidity,
    rotation_similarity,
)
from gslift.rotation import quat_from_axis_angle, quat_rotate
from gslift.scene import GaussianScene


def make_scene(points):
    n = len(points)
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    return GaussianScene(
        positions=np.asarray(points, dtype=np.float64),
        scales=np.full((n, 3), 0.01),
        rotations=rot,
        opacities=np.full(n, 0.5),
        colors=np.zeros((n, 3)),
    )


def identity_dyn(n, steps):
    return identity_dynamic_scene(np.ones(n, dtype=bool), np.arange(steps))


def rigid_dyn(scene, quats, translations):
    """Dynamic scene for a global per-frame rotation+translation."""
    n = scene.count
    dyn = identity_dyn(n, len(quats))
    for k, (q, t) in enumerate(zip(quats, translations)):
        dyn.translations[k] = quat_rotate(q, scene.positions) + t - scene.positions
        dyn.rot_deltas[k] = np.tile(q, (n, 1))
    return dyn


@pytest.fixture
def cloud(rng):
    return make_scene(rng.uniform(-1, 1, size=(40, 3)))


class TestIdentityIsZero:
    def test_all_motion_metrics_zero(self, cloud):
        dyn = identity_dyn(40, 4)
        assert displacement(dyn, cloud) == 0.0
        assert momentum(dyn, cloud) == 0.0
        assert isometry(dyn, cloud, 5) == 0.0
        assert rigidity(dyn, cloud, 5) == 0.0
        assert rotation_similarity(dyn, cloud, 5) == 0.0


class TestDisplacement:
    def test_uniform_translation(self, cloud):
        dyn = identity_dyn(40, 5)
        for k in range(5):
            dyn.translations[k, :, 0] = 0.1 * k
        assert displacement(dyn, cloud) == pytest.approx(0.1, abs=1e-12)

    def test_linearity(self, cloud, rng):
        dyn = identity_dyn(40, 4)
        dyn.translations[:] = rng.normal(size=(4, 40, 3))
        half = identity_dyn(40, 4)
        half.translations[:] = dyn.translations / 2.0
        assert displacement(half, cloud) == pytest.approx(displacement(dyn, cloud) / 2.0)

    def test_needs_two_steps(self, cloud):
        with pytest.raises(InputError):
            displacement(identity_dyn(40, 1), cloud)


class TestMomentum:
    def test_constant_velocity_zero(self, cloud):
        dyn = identity_dyn(40, 5)
        for k in range(5):
            dyn.translations[k, :, 1] = 0.2 * k
        assert momentum(dyn, cloud) == pytest.approx(0.0, abs=1e-24)

    def test_second_difference_arithmetic(self):
        scene = make_scene([[0.0, 0.0, 0.0]])
        dyn = identity_dyn(1, 3)
        dyn.translations[2, 0, 0] = 1.0  # positions 0, 0, 1 on one axis
        assert momentum(dyn, scene) == pytest.approx(1.0, abs=1e-12)


class TestIsometry:
    def test_global_rigid_motion_vanishes(self, cloud, rng):
        quats = [np.array([1.0, 0, 0, 0])]
        trans = [np.zeros(3)]
        for k in range(3):
            quats.append(quat_from_axis_angle(rng.normal(size=3), 0.3))
            trans.append(rng.normal(size=3) * 0.2)
        dyn = rigid_dyn(cloud, quats, trans)
        assert isometry(dyn, cloud, 6) < 1e-9

    def test_uniform_scaling_equals_mean_neighbor_distance(self, cloud):
        c = cloud.positions.mean(axis=0)
        dyn = identity_dyn(40, 2)
        for k in range(2):   # every frame scaled by 2 about the centroid
            dyn.translations[k] = (cloud.positions - c)
        k_eval = 6
        tree = cKDTree(cloud.positions)
        _, idx = tree.query(cloud.positions, k=k_eval + 1)
        nbr = idx[:, 1:]
        d_canon = np.linalg.norm(cloud.positions[:, None, :] - cloud.positions[nbr], axis=2)
        assert isometry(dyn, cloud, k_eval) == pytest.approx(d_canon.mean(), rel=1e-12)


class TestRigidity:
    def test_consistent_rotation_deltas_vanish(self, cloud, rng):
        quats = [np.array([1.0, 0, 0, 0]),
                 quat_from_axis_angle([0, 0, 1], 0.4),
                 quat_from_axis_angle([0, 1, 0], 0.9)]
        trans = [np.zeros(3), np.array([0.1, 0, 0]), np.array([0.0, 0.2, 0])]
        dyn = rigid_dyn(cloud, quats, trans)
        assert rigidity(dyn, cloud, 6) < 1e-9

    def test_missing_rotation_deltas_positive(self, cloud):
        q = quat_from_axis_angle([0, 0, 1], 0.5)
        dyn = rigid_dyn(cloud, [np.array([1.0, 0, 0, 0]), q],
                        [np.zeros(3), np.zeros(3)])
        dyn.rot_deltas[:] = np.array([1.0, 0, 0, 0])  # positions rotate, deltas say no
        assert rigidity(dyn, cloud, 6) > 1e-4


class TestRotationSimilarity:
    def test_shared_delta_is_zero(self, cloud, rng):
        q = quat_from_axis_angle(rng.normal(size=3), 0.7)
        dyn = identity_dyn(40, 2)
        dyn.rot_deltas[1] = np.tile(q, (40, 1))
        assert rotation_similarity(dyn, cloud, 6) == pytest.approx(0.0, abs=1e-12)

    def test_ninety_degree_pair(self):
        scene = make_scene([[0.0, 0, 0], [1.0, 0, 0]])
        dyn = identity_dyn(2, 2)
        dyn.rot_deltas[1, 0] = np.array([1.0, 0, 0, 0])
        dyn.rot_deltas[1, 1] = quat_from_axis_angle([0, 0, 1], np.pi / 2)
        # <q_i, q_j> = cos(45 deg) -> 1 - cos^2 = 0.5
        assert rotation_similarity(dyn, scene, 1) == pytest.approx(0.5, abs=1e-12)


class TestPermutationInvariance:
    def test_joint_shuffle_preserves_metrics(self, rng):
        pts = rng.uniform(-1, 1, size=(30, 3))
        scene = make_scene(pts)
        dyn = identity_dyn(30, 3)
        dyn.translations[:] = rng.normal(size=(3, 30, 3)) * 0.05
        dyn.rot_deltas[:] = np.array([1.0, 0, 0, 0])
        perm = rng.permutation(30)
        scene_p = make_scene(pts[perm])
        dyn_p = identity_dyn(30, 3)
        dyn_p.translations[:] = dyn.translations[:, perm]
        dyn_p.rot_deltas[:] = dyn.rot_deltas[:, perm]
        for fn in (displacement, momentum):
            assert fn(dyn, scene) == pytest.approx(fn(dyn_p, scene_p), rel=1e-12)
        for fn in (isometry, rigidity, rotation_similarity):
            assert fn(dyn, scene, 5) == pytest.approx(fn(dyn_p, scene_p, 5), rel=1e-9)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


class TestClipScores:
    def test_text_identical(self):
        e = np.tile(unit([1.0, 2.0, 3.0]), (1, 4, 1))
        emb = EmbeddingSet(frame_embeddings=e, text_embedding=unit([1.0, 2.0, 3.0]))
        assert clip_text_score(emb) == pytest.approx(1.0)

    def test_text_orthogonal(self):
        frames = np.tile(unit([1.0, 0.0]), (2, 3, 1))
        emb = EmbeddingSet(frame_embeddings=frames, text_embedding=unit([0.0, 1.0]))
        assert clip_text_score(emb) == pytest.approx(0.0, abs=1e-12)

    def test_text_mean(self):
        t = np.array([1.0, 0.0])
        f1 = np.array([0.2, np.sqrt(1 - 0.04)])
        f2 = np.array([0.4, np.sqrt(1 - 0.16)])
        emb = EmbeddingSet(frame_embeddings=np.stack([[f1, f2]]), text_embedding=t)
        assert clip_text_score(emb) == pytest.approx(0.3, abs=1e-12)

    def test_text_requires_embedding(self):
        emb = EmbeddingSet(frame_embeddings=np.ones((1, 1, 1)), text_embedding=None)
        with pytest.raises(InputError):
            clip_text_score(emb)

    def test_temporal_identical(self):
        e = np.tile(unit([0.0, 1.0, 0.0]), (2, 5, 1))
        emb = EmbeddingSet(frame_embeddings=e, text_embedding=None)
        assert clip_temporal_score(emb) == pytest.approx(1.0)

    def test_temporal_alternating_orthogonal(self):
        a, b = unit([1.0, 0.0]), unit([0.0, 1.0])
        frames = np.stack([[a, b, a, b]])
        emb = EmbeddingSet(frame_embeddings=frames, text_embedding=None)
        assert clip_temporal_score(emb) == pytest.approx(0.0, abs=1e-12)

    def test_temporal_mean(self):
        a = np.array([1.0, 0.0])
        b = np.array([1.0, 0.0])          # cos(a,b) = 1
        c = unit([1.0, np.sqrt(3.0)])     # cos(b,c) = 0.5
        emb = EmbeddingSet(frame_embeddings=np.stack([[a, b, c]]), text_embedding=None)
        assert clip_temporal_score(emb) == pytest.approx(0.75, abs=1e-12)

    def test_temporal_needs_two_frames(self):
        emb = EmbeddingSet(frame_embeddings=np.ones((1, 1, 1)), text_embedding=None)
        with pytest.raises(InputError):
            clip_temporal_score(emb)

    def test_unit_norm_enforced(self):
        with pytest.raises(InputError):
            EmbeddingSet(frame_embeddings=np.full((1, 1, 2), 3.0), text_embedding=None)


class TestReportAndRanks:
    def test_compute_report_identity(self, cloud):
        report = compute_report(identity_dyn(40, 3), cloud)
        assert report.displacement == 0.0
        assert report.rigidity == 0.0
        d = report.to_dict()
        assert d["neighbor_weighting"] == "uniform"
        assert "clip_text" not in d

    def test_identity_vs_motion_ranks(self, cloud, rng):
        moving = identity_dyn(40, 3)
        moving.translations[1:] = rng.normal(size=(2, 40, 3)) * 0.1
        r_static = compute_report(identity_dyn(40, 3), cloud)
        r_moving = compute_report(moving, cloud)
        ranking = rank_reports([r_static, r_moving])
        pm = ranking["per_metric"]
        assert pm["displacement"] == [2, 1]   # higher displacement is better
        for geo in ("rigidity", "momentum", "isometry", "rotation_similarity"):
            assert pm[geo][0] == 1            # identity wins geometry

    def test_rank_needs_two(self, cloud):
        with pytest.raises(InputError):
            rank_reports([compute_report(identity_dyn(40, 3), cloud)])

    def test_rank_with_clip(self):
        a = MetricReport(1.0, 0.1, 0.1, 0.1, 0.1, clip_text=0.9, clip_temporal=0.8)
        b = MetricReport(2.0, 0.2, 0.2, 0.2, 0.2, clip_text=0.5, clip_temporal=0.9)
        ranking = rank_reports([a, b])
        assert ranking["per_metric"]["clip_text"] == [1, 2]
        assert ranking["per_metric"]["clip_temporal"] == [2, 1]
        assert set(ranking["category_average"]) == {"motion", "geometry", "appearance"}
        assert len(ranking["overall_rank"]) == 2
