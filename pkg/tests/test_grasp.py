import math

import numpy as np
import pytest

from dexsim import grasp, se3
from dexsim.errors import EmptyCandidateSet, SceneFormatError, ZeroNormFeature
from dexsim.grasp import CalibrationSet, GraspProposal
from dexsim.se3 import Rotation3, Transform


def random_proposal(rng) -> GraspProposal:
    return GraspProposal(
        rng.uniform(-0.4, 0.4, size=3),
        se3.random_rotation(rng),
        float(rng.uniform(0.0, grasp.MAX_APERTURE)),
    )


def oracle_confidences(candidates):
    """Independent double-loop scorer: re-encodes and sums pairwise cosines."""
    feats = []
    for g in candidates:
        f = np.concatenate([g.t / 0.5, g.R.m.reshape(9), [g.w / 0.1]])
        feats.append(f)
    out = []
    for j in range(len(feats)):
        c = 0.0
        for k in range(len(feats)):
            if j == k:
                c += 1.0
            else:
                v = float(np.dot(feats[j], feats[k])) / (
                    float(np.linalg.norm(feats[j])) * float(np.linalg.norm(feats[k]))
                )
                c += min(1.0, max(-1.0, v))
        out.append(c)
    return out


def test_encode_deterministic_and_baseline():
    g1 = GraspProposal((0.1, 0.2, 0.3), se3.rot_z(0.5), 0.06)
    g2 = GraspProposal((0.1, 0.2, 0.3), se3.rot_z(0.5), 0.06)
    assert np.array_equal(grasp.encode_features(g1), grasp.encode_features(g2))

    base = grasp.encode_features(GraspProposal((0.0, 0.0, 0.0), Rotation3.identity(), 0.0))
    expected = np.array([0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0], dtype=float)
    assert np.array_equal(base, expected)


def test_encode_rotation_changes_only_rotation_channels():
    a = GraspProposal((0.1, -0.2, 0.05), Rotation3.identity(), 0.08)
    b = GraspProposal((0.1, -0.2, 0.05), se3.rot_z(math.pi), 0.08)
    fa, fb = grasp.encode_features(a), grasp.encode_features(b)
    assert np.array_equal(fa[:3], fb[:3])
    assert fa[12] == fb[12]
    assert not np.array_equal(fa[3:12], fb[3:12])


def test_proposal_rejects_width_outside_aperture():
    with pytest.raises(SceneFormatError):
        GraspProposal((0, 0, 0), Rotation3.identity(), 0.2)
    with pytest.raises(SceneFormatError):
        GraspProposal((0, 0, 0), Rotation3.identity(), -0.01)


def test_similarity_basics():
    p = np.zeros(13)
    p[0] = 1.0
    q = np.zeros(13)
    q[1] = 1.0
    assert grasp.similarity(p, p) == 1.0
    assert grasp.similarity(p, q) == 0.0
    r = np.zeros(13)
    r[0] = r[1] = 1.0
    assert abs(grasp.similarity(p, r) - 1.0 / math.sqrt(2.0)) < 1e-15
    with pytest.raises(ZeroNormFeature):
        grasp.similarity(p, np.zeros(13))


def test_select_single_candidate():
    g = GraspProposal((0.1, 0.0, 0.1), Rotation3.identity(), 0.05)
    index, confidences = grasp.select_grasp([g])
    assert index == 0
    assert confidences == [1.0]


def test_select_identical_pair_beats_outlier():
    twin = GraspProposal((0.1, 0.1, 0.05), se3.rot_x(0.3), 0.06)
    outlier = GraspProposal((-0.4, -0.4, 0.3), se3.rot_y(2.5), 0.01)
    index, confidences = grasp.select_grasp([twin, twin, outlier])
    assert index == 0
    assert confidences == oracle_confidences([twin, twin, outlier])


def test_select_matches_bruteforce_oracle_exactly():
    rng = np.random.default_rng(77)
    for _ in range(100):
        n = int(rng.integers(1, 11))
        candidates = [random_proposal(rng) for _ in range(n)]
        index, confidences = grasp.select_grasp(candidates)
        expected = oracle_confidences(candidates)
        assert confidences == expected
        best = max(range(n), key=lambda j: (expected[j], -j))
        assert index == best


def test_select_empty_raises():
    with pytest.raises(EmptyCandidateSet):
        grasp.select_grasp([])


def test_correspondence_matrix_invariants():
    rng = np.random.default_rng(123)
    for _ in range(100):
        n = int(rng.integers(2, 11))
        feats = [grasp.encode_features(random_proposal(rng)) for _ in range(n)]
        s = grasp.correspondence_matrix(feats)
        assert np.abs(s - s.T).max() < 1e-9
        assert np.abs(np.diag(s) - 1.0).max() < 1e-9
        assert s.min() >= -1.0 and s.max() <= 1.0


def test_argmax_invariant_under_positive_scaling():
    rng = np.random.default_rng(321)
    for _ in range(50):
        n = int(rng.integers(2, 11))
        feats = [grasp.encode_features(random_proposal(rng)) for _ in range(n)]
        scale = float(rng.uniform(0.1, 50.0))
        base_index, _ = grasp.select_from_features(feats)
        scaled_index, _ = grasp.select_from_features([scale * f for f in feats])
        assert base_index == scaled_index


def test_retarget_identity_chain():
    calib = CalibrationSet(Transform.identity(), Transform.identity())
    g = GraspProposal((0.0, 0.0, 0.0), Rotation3.identity(), 0.05)
    out = grasp.retarget_to_end_effector(g, calib)
    assert np.abs(out.to_matrix() - np.eye(4)).max() < 1e-12


def test_retarget_round_trip_through_calibration_solve():
    rng = np.random.default_rng(5)
    for _ in range(20):
        b_e = se3.random_transform(rng)
        b_h = se3.random_transform(rng)
        b_c = se3.random_transform(rng)
        hand_on_end = grasp.solve_hand_on_end(b_e, b_h)
        hand_in_cam = b_c.inverse().compose(b_h)
        g = GraspProposal(hand_in_cam.translation, hand_in_cam.rotation, 0.05)
        recovered = grasp.retarget_to_end_effector(g, CalibrationSet(b_c, hand_on_end))
        assert np.abs(recovered.to_matrix() - b_e.to_matrix()).max() < 1e-9


def test_retarget_pure_translation_calibration_shifts_along_hand_z():
    hand_on_end = Transform(Rotation3.identity(), (0.0, 0.0, 0.15))
    calib = CalibrationSet(Transform.identity(), hand_on_end)
    g = GraspProposal((0.2, 0.1, 0.3), se3.rot_x(0.4), 0.05)
    shifted = grasp.retarget_to_end_effector(g, calib)
    bare = grasp.retarget_to_end_effector(g, CalibrationSet(Transform.identity(), Transform.identity()))
    delta = shifted.translation - bare.translation
    hand_z = bare.rotation.m[:, 2]
    assert np.abs(delta - (-0.15) * hand_z).max() < 1e-12


def test_solve_hand_on_end_trivials_and_random():
    t = Transform(se3.rot_y(0.7), (0.1, 0.2, 0.3))
    assert np.abs(grasp.solve_hand_on_end(t, t).to_matrix() - np.eye(4)).max() < 1e-12
    assert np.abs(grasp.solve_hand_on_end(Transform.identity(), t).to_matrix() - t.to_matrix()).max() < 1e-12
    rng = np.random.default_rng(99)
    for _ in range(50):
        b_e = se3.random_transform(rng)
        b_h = se3.random_transform(rng)
        x = grasp.solve_hand_on_end(b_e, b_h)
        assert np.abs(b_e.compose(x).to_matrix() - b_h.to_matrix()).max() < 1e-9


def test_candidate_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    candidates = [random_proposal(rng) for _ in range(6)]
    path = tmp_path / "candidates.txt"
    grasp.save_candidates(path, candidates)
    loaded = grasp.load_candidates(path)
    assert len(loaded) == 6
    for a, b in zip(candidates, loaded):
        assert np.array_equal(a.t, b.t)
        assert np.array_equal(a.R.m, b.R.m)
        assert a.w == b.w
    # Identical content writes identical bytes: usable as a golden file.
    path2 = tmp_path / "again.txt"
    grasp.save_candidates(path2, candidates)
    assert path.read_bytes() == path2.read_bytes()
