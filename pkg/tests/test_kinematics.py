import math

import numpy as np
import pytest

from dexsim import kinematics as kin
from dexsim import se3
from dexsim.errors import InvalidCount, JointLimitViolation, SceneFormatError, Unreachable
from dexsim.se3 import Transform


def dh_oracle(row: kin.DHRow, q: float) -> np.ndarray:
    """Independent oracle: explicit product Rz(theta) Tz(d) Tx(a) Rx(alpha)."""
    th = q + row.theta_offset
    rz = np.eye(4)
    rz[0, 0] = rz[1, 1] = math.cos(th)
    rz[0, 1] = -math.sin(th)
    rz[1, 0] = math.sin(th)
    tz = np.eye(4)
    tz[2, 3] = row.d
    tx = np.eye(4)
    tx[0, 3] = row.a
    rx = np.eye(4)
    rx[1, 1] = rx[2, 2] = math.cos(row.alpha)
    rx[1, 2] = -math.sin(row.alpha)
    rx[2, 1] = math.sin(row.alpha)
    return rz @ tz @ tx @ rx


def fk_oracle(chain: kin.KinematicChain, q) -> np.ndarray:
    m = chain.base.to_matrix()
    for row, qi in zip(chain.rows, q):
        m = m @ dh_oracle(row, float(qi))
    return m @ chain.tool.to_matrix()


def random_configs(chain, rng, count):
    lo = np.array([l for l, _ in chain.limits])
    hi = np.array([h for _, h in chain.limits])
    return rng.uniform(lo, hi, size=(count, chain.dof))


def test_forward_zero_row_chain_is_identity():
    chain = kin.KinematicChain(())
    assert np.allclose(kin.forward(chain, []).to_matrix(), np.eye(4))


def test_forward_matches_per_row_oracle_at_zero():
    chain = kin.ur5_chain()
    q = np.zeros(6)
    assert np.abs(kin.forward(chain, q).to_matrix() - fk_oracle(chain, q)).max() < 1e-9


def test_forward_matches_per_row_oracle_random():
    chain = kin.ur5_chain()
    rng = np.random.default_rng(42)
    for q in random_configs(chain, rng, 50):
        assert np.abs(kin.forward(chain, q).to_matrix() - fk_oracle(chain, q)).max() < 1e-9


def test_single_row_chain_analytic():
    # One revolute joint, link length 1: at q=pi/2 the link end sits at (0,1,0)
    # and the frame is rotated 90 degrees about z.
    chain = kin.KinematicChain((kin.DHRow(1.0, 0.0, 0.0),))
    pose = kin.forward(chain, [math.pi / 2])
    assert np.allclose(pose.translation, (0.0, 1.0, 0.0), atol=1e-12)
    assert np.allclose(pose.rotation.m, se3.rot_z(math.pi / 2).m, atol=1e-12)


def test_forward_rejects_out_of_limit_joint():
    chain = kin.ur5_chain()
    q = np.zeros(6)
    q[2] = 7.0
    with pytest.raises(JointLimitViolation):
        kin.forward(chain, q)


def test_jacobian_matches_central_differences():
    chain = kin.ur5_chain()
    rng = np.random.default_rng(9)
    eps = 1e-6
    for q in random_configs(chain, rng, 50):
        jac = kin.jacobian(chain, q)
        num = np.zeros_like(jac)
        base_rot = kin.forward(chain, q).rotation.m
        for j in range(6):
            dq = np.zeros(6)
            dq[j] = eps
            hi = kin.forward(chain, q + dq)
            lo = kin.forward(chain, q - dq)
            num[:3, j] = (hi.translation - lo.translation) / (2 * eps)
            drot = (hi.rotation.m - lo.rotation.m) / (2 * eps)
            w = drot @ base_rot.T
            num[3:, j] = [w[2, 1], w[0, 2], w[1, 0]]
        assert np.abs(jac - num).max() < 1e-5


def test_ik_fixed_point():
    chain = kin.ur5_chain()
    seed = np.array([0.1, -1.2, 1.0, -0.8, -1.4, 0.3])
    target = kin.forward(chain, seed)
    q = kin.inverse(chain, target, seed)
    dt, dr = kin.forward(chain, q).distance_to(target)
    assert dt < 1e-4 and dr < 1e-3


def test_ik_converges_from_perturbed_seed():
    chain = kin.ur5_chain()
    rng = np.random.default_rng(17)
    q_true = np.array([0.4, -1.1, 1.3, -1.0, -1.5, 0.2])
    target = kin.forward(chain, q_true)
    seed = q_true + rng.uniform(-0.2, 0.2, size=6)
    q = kin.inverse(chain, target, seed, max_iters=100)
    dt, dr = kin.forward(chain, q).distance_to(target)
    assert dt < 1e-4 and dr < 1e-3


def test_ik_round_trip_200_targets():
    chain = kin.ur5_chain()
    rng = np.random.default_rng(2024)
    for _ in range(200):
        q_true = rng.uniform(-math.pi, math.pi, size=6)
        target = kin.forward(chain, q_true)
        seed = np.clip(q_true + rng.uniform(-0.2, 0.2, size=6), -2 * math.pi, 2 * math.pi)
        q = kin.inverse(chain, target, seed)
        dt, dr = kin.forward(chain, q).distance_to(target)
        assert dt < 1e-4 and dr < 1e-3


def test_ik_unreachable_target():
    chain = kin.ur5_chain()
    target = Transform(se3.Rotation3.identity(), (10.0, 0.0, 0.0))
    with pytest.raises(Unreachable):
        kin.inverse(chain, target, np.zeros(6))


def test_waypoints_trivial_counts():
    a = Transform(se3.rot_x(0.3), (0.0, 0.0, 0.0))
    b = Transform(se3.rot_x(0.9), (1.0, 0.0, 0.0))
    assert kin.plan_waypoints(a, b, 2) == [a, b]
    same = kin.plan_waypoints(a, a, 5)
    assert len(same) == 5
    for p in same:
        assert np.abs(p.to_matrix() - a.to_matrix()).max() < 1e-12
    with pytest.raises(InvalidCount):
        kin.plan_waypoints(a, b, 1)


def test_waypoints_middle_orientation_is_half_angle():
    a = Transform.identity()
    b = Transform(se3.rot_z(math.pi / 2), (0.2, 0.0, 0.0))
    mid = kin.plan_waypoints(a, b, 3)[1]
    assert np.abs(mid.rotation.m - se3.rot_z(math.pi / 4).m).max() < 1e-9
    assert np.allclose(mid.translation, (0.1, 0.0, 0.0))


def test_waypoints_stay_on_geodesic():
    rng = np.random.default_rng(5)
    a = se3.random_transform(rng)
    b = se3.random_transform(rng)
    points = kin.plan_waypoints(a, b, 12)
    total = a.rotation.angle_to(b.rotation)
    for i, p in enumerate(points):
        s = i / 11
        # On the geodesic, angles from both endpoints split the total exactly.
        from_a = a.rotation.angle_to(p.rotation)
        from_b = p.rotation.angle_to(b.rotation)
        assert abs(from_a - s * total) < 1e-9
        assert abs(from_a + from_b - total) < 1e-9


def test_chain_file_round_trip(tmp_path):
    chain = kin.ur5_chain()
    path = tmp_path / "arm.dh"
    kin.save_chain(chain, path)
    loaded = kin.load_chain(path)
    assert len(loaded.rows) == 6
    q = np.array([0.3, -0.9, 1.1, -0.7, -1.2, 0.4])
    assert np.abs(kin.forward(loaded, q).to_matrix() - kin.forward(chain, q).to_matrix()).max() < 1e-9
    assert loaded.limits == chain.limits


def test_chain_file_rejects_garbage(tmp_path):
    path = tmp_path / "bad.dh"
    path.write_text("0.1 0.2 0.3\n")
    with pytest.raises(SceneFormatError):
        kin.load_chain(path)
