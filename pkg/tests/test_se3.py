import math

import numpy as np
import pytest

from dexsim import se3
from dexsim.errors import FractionOutOfRange, NonOrthonormalRotation
from dexsim.se3 import Rotation3, Transform


def homogeneous_product(a: Transform, b: Transform) -> np.ndarray:
    """Independent oracle: plain 4x4 matrix multiply."""
    ma = np.eye(4)
    ma[:3, :3] = a.rotation.m
    ma[:3, 3] = a.translation
    mb = np.eye(4)
    mb[:3, :3] = b.rotation.m
    mb[:3, 3] = b.translation
    return ma @ mb


def test_compose_identity():
    t = Transform(se3.rot_z(0.3), (1.0, 2.0, 3.0))
    out = Transform.identity().compose(t)
    assert np.allclose(out.to_matrix(), t.to_matrix(), atol=1e-12)


def test_compose_with_inverse_is_identity():
    t = Transform(se3.rot_y(1.1), (0.2, -0.4, 0.9))
    out = t.compose(t.inverse())
    assert np.abs(out.to_matrix() - np.eye(4)).max() < 1e-9


def test_compose_matches_matrix_oracle():
    a = Transform(se3.rot_z(math.pi / 2), (1.0, 0.0, 0.0))
    b = Transform(Rotation3.identity(), (0.0, 1.0, 0.0))
    out = a.compose(b)
    assert np.abs(out.to_matrix() - homogeneous_product(a, b)).max() < 1e-12
    # Rz(90) rotates b's translation (0,1,0) onto (-1,0,0), cancelling a's (1,0,0).
    assert np.allclose(out.translation, (0.0, 0.0, 0.0), atol=1e-12)
    assert np.allclose(out.rotation.m, se3.rot_z(math.pi / 2).m, atol=1e-12)


def test_inverse_identity_and_pure_translation():
    assert np.allclose(Transform.identity().inverse().to_matrix(), np.eye(4))
    t = Transform(Rotation3.identity(), (1.0, 2.0, 3.0))
    assert np.allclose(t.inverse().translation, (-1.0, -2.0, -3.0))


def test_inverse_round_trip_random():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        t = se3.random_transform(rng)
        err = np.abs(t.compose(t.inverse()).to_matrix() - np.eye(4)).max()
        assert err < 1e-9


def test_compose_associativity():
    rng = np.random.default_rng(11)
    for _ in range(200):
        a, b, c = (se3.random_transform(rng) for _ in range(3))
        lhs = a.compose(b).compose(c)
        rhs = a.compose(b.compose(c))
        assert np.abs(lhs.to_matrix() - rhs.to_matrix()).max() < 1e-9


def test_from_rotation_translation_blocks():
    t = se3.from_rotation_translation(Rotation3.identity(), (0.0, 0.0, 0.0))
    assert np.allclose(t.to_matrix(), np.eye(4))
    t = se3.from_rotation_translation(se3.rot_z(math.pi / 2), (0.0, 0.0, 0.1))
    assert np.allclose(t.apply((1.0, 0.0, 0.0)), (0.0, 1.0, 0.1), atol=1e-12)


def test_from_rotation_translation_rejects_drifted_matrix():
    m = np.eye(3)
    m[0, 1] = 1e-4
    with pytest.raises(NonOrthonormalRotation):
        se3.from_rotation_translation(m, (0.0, 0.0, 0.0))


def test_rotation_reprojects_small_drift():
    m = se3.rot_x(0.7).m + 1e-7
    r = Rotation3(m)
    assert np.abs(r.m.T @ r.m - np.eye(3)).max() < 1e-9
    assert abs(np.linalg.det(r.m) - 1.0) < 1e-9


def test_interpolate_endpoints_exact():
    a = Transform(se3.rot_x(0.2), (0.0, 0.0, 0.0))
    b = Transform(se3.rot_x(1.2), (1.0, 1.0, 1.0))
    assert se3.interpolate(a, b, 0.0) is a
    assert se3.interpolate(a, b, 1.0) is b


def test_interpolate_halfway_is_half_angle():
    a = Transform.identity()
    b = Transform(se3.rot_z(math.pi / 2), (0.0, 0.0, 0.0))
    mid = se3.interpolate(a, b, 0.5)
    # Oracle: halve the axis-angle directly.
    assert np.abs(mid.rotation.m - se3.rot_z(math.pi / 4).m).max() < 1e-9


def test_interpolate_rejects_out_of_range():
    a, b = Transform.identity(), Transform.identity()
    for s in (-0.01, 1.01):
        with pytest.raises(FractionOutOfRange):
            se3.interpolate(a, b, s)


def test_interpolate_preserves_so3():
    rng = np.random.default_rng(3)
    a = se3.random_transform(rng)
    b = se3.random_transform(rng)
    for s in np.linspace(0.0, 1.0, 17):
        m = se3.interpolate(a, b, float(s)).rotation.m
        assert np.abs(m.T @ m - np.eye(3)).max() < 1e-9
        assert abs(np.linalg.det(m) - 1.0) < 1e-9


def test_flat_serialization_round_trip():
    rng = np.random.default_rng(5)
    t = se3.random_transform(rng)
    flat = t.to_flat()
    assert len(flat) == 12
    back = Transform.from_flat(flat)
    assert np.abs(back.to_matrix() - t.to_matrix()).max() < 1e-12


def test_transform_values_are_immutable():
    t = Transform.identity()
    with pytest.raises(ValueError):
        t.translation[0] = 1.0
    with pytest.raises(ValueError):
        t.rotation.m[0, 0] = 2.0
