import numpy as np
import pytest

from dualvic import dynamics
from dualvic.geometry import Pose, quat_from_rotvec, quat_to_mat

from conftest import make_chain, planar_link, planar_two_link, random_chain
from oracles import (
    bias_forces_lagrangian,
    fk_homogeneous,
    kinetic_energy_fd,
    numeric_jacobian,
    rotation_log,
    two_link_mass_matrix,
)


class TestForwardKinematics:
    def test_straight_two_link(self, backend):
        chain = planar_two_link()
        pose = dynamics.fk_pose(chain, np.zeros(2), backend=backend)
        np.testing.assert_allclose(pose.position, [2.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(pose.orientation, [1, 0, 0, 0], atol=1e-12)

    def test_rigid_rotation(self, backend):
        chain = planar_two_link()
        pose = dynamics.fk_pose(chain, [np.pi / 2, 0.0], backend=backend)
        np.testing.assert_allclose(pose.position, [0.0, 2.0, 0.0], atol=1e-12)

    def test_matches_homogeneous_oracle(self, backend):
        rng = np.random.default_rng(11)
        for _ in range(20):
            chain = random_chain(rng)
            q = rng.uniform(-2.0, 2.0, size=chain.n)
            pose = dynamics.fk_pose(chain, q, backend=backend)
            R_o, p_o = fk_homogeneous(chain, q)
            np.testing.assert_allclose(pose.position, p_o, atol=1e-10)
            np.testing.assert_allclose(pose.rotation, R_o, atol=1e-10)

    def test_dimension_mismatch(self):
        chain = planar_two_link()
        with pytest.raises(ValueError):
            dynamics.fk_pose(chain, np.zeros(3))

    def test_pure(self, backend):
        chain = planar_two_link()
        q = np.array([0.3, -0.7])
        a = dynamics.fk_pose(chain, q, backend=backend)
        b = dynamics.fk_pose(chain, q, backend=backend)
        assert np.array_equal(a.position, b.position)
        assert np.array_equal(a.orientation, b.orientation)


class TestJacobian:
    def test_zero_velocity_maps_to_zero(self, backend):
        rng = np.random.default_rng(3)
        chain = random_chain(rng)
        J = dynamics.jacobian(chain, rng.uniform(-1, 1, chain.n), backend=backend)
        np.testing.assert_array_equal(J @ np.zeros(chain.n), np.zeros(6))

    def test_unit_lever_arm(self, backend):
        chain = make_chain([planar_link(1.0, 1.0)], ee_offset=Pose([1, 0, 0], [1, 0, 0, 0]))
        J = dynamics.jacobian(chain, [0.0], backend=backend)
        np.testing.assert_allclose(J[:3, 0], [0.0, 1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(J[3:, 0], [0.0, 0.0, 1.0], atol=1e-12)

    def test_matches_finite_differences(self, backend):
        rng = np.random.default_rng(17)
        for _ in range(15):
            chain = random_chain(rng, n=int(rng.integers(2, 8)))
            q = rng.uniform(-1.5, 1.5, size=chain.n)
            J = dynamics.jacobian(chain, q, backend=backend)
            np.testing.assert_allclose(J, numeric_jacobian(chain, q), atol=1e-6)


class TestJdotQdot:
    def test_zero_velocity(self, backend):
        rng = np.random.default_rng(5)
        chain = random_chain(rng)
        out = dynamics.jdot_qdot(chain, rng.uniform(-1, 1, chain.n), np.zeros(chain.n), backend=backend)
        np.testing.assert_array_equal(out, np.zeros(6))

    def test_centripetal_single_link(self, backend):
        chain = make_chain([planar_link(1.0, 1.0)], ee_offset=Pose([1, 0, 0], [1, 0, 0, 0]))
        omega = 2.0
        out = dynamics.jdot_qdot(chain, [0.0], [omega], backend=backend)
        # tip on a circle: acceleration of magnitude w^2 pointing at the joint
        np.testing.assert_allclose(out[:3], [-(omega**2), 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(out[3:], np.zeros(3), atol=1e-12)

    def test_matches_jacobian_derivative(self, backend):
        rng = np.random.default_rng(23)
        h = 1e-6
        for _ in range(15):
            chain = random_chain(rng, n=int(rng.integers(2, 8)))
            q = rng.uniform(-1.5, 1.5, size=chain.n)
            dq = rng.uniform(-1.0, 1.0, size=chain.n)
            Jp = dynamics.jacobian(chain, q + h * dq, backend=backend)
            Jm = dynamics.jacobian(chain, q - h * dq, backend=backend)
            expected = (Jp - Jm) / (2.0 * h) @ dq
            got = dynamics.jdot_qdot(chain, q, dq, backend=backend)
            np.testing.assert_allclose(got, expected, atol=1e-5)


class TestMassMatrix:
    def test_point_mass_pendulum(self, backend):
        # mass concentrated at the tip: M = m l^2
        from dualvic.chain import LinkSpec

        link = LinkSpec(
            mass=1.0,
            com=[1.0, 0.0, 0.0],
            inertia=np.eye(3) * 1e-12,
            axis=[0, 0, 1],
            joint_type="revolute",
            origin=Pose.identity(),
        )
        chain = make_chain([link])
        M = dynamics.mass_matrix(chain, [0.3], backend=backend)
        np.testing.assert_allclose(M, [[1.0]], atol=1e-9)

    def test_closed_form_two_link(self, backend):
        rng = np.random.default_rng(29)
        chain = planar_two_link(l1=0.8, l2=0.6, m1=1.4, m2=0.9)
        I1 = chain.links[0].inertia[2, 2]
        I2 = chain.links[1].inertia[2, 2]
        for _ in range(10):
            q = rng.uniform(-2, 2, size=2)
            M = dynamics.mass_matrix(chain, q, backend=backend)
            M_ref = two_link_mass_matrix(1.4, 0.9, 0.8, 0.6, 0.4, 0.3, I1, I2, q)
            np.testing.assert_allclose(M, M_ref, atol=1e-9)

    def test_kinetic_energy_oracle(self, backend):
        rng = np.random.default_rng(31)
        for _ in range(20):
            chain = random_chain(rng)
            q = rng.uniform(-1.5, 1.5, size=chain.n)
            dq = rng.uniform(-1.0, 1.0, size=chain.n)
            M = dynamics.mass_matrix(chain, q, backend=backend)
            T = 0.5 * dq @ M @ dq
            assert abs(T - kinetic_energy_fd(chain, q, dq)) < 1e-8

    def test_spd(self, backend):
        rng = np.random.default_rng(37)
        for _ in range(50):
            chain = random_chain(rng, n=int(rng.integers(1, 8)))
            q = rng.uniform(-2, 2, size=chain.n)
            M = dynamics.mass_matrix(chain, q, backend=backend)
            np.testing.assert_allclose(M, M.T, atol=1e-10)
            assert np.min(np.linalg.eigvalsh(M)) > 0.0


class TestBiasForces:
    def test_hanging_pendulum(self, backend):
        # gravity along the link: no moment
        chain = make_chain([planar_link(1.0, 1.0, axis=(0, 1, 0))], gravity=(0, 0, -9.81))
        # q=pi/2 rotates +x down to -z for axis +y
        h = dynamics.bias_forces(chain, [np.pi / 2], [0.0], backend=backend)
        np.testing.assert_allclose(h, [0.0], atol=1e-9)

    def test_horizontal_pendulum(self, backend):
        from dualvic.chain import LinkSpec

        link = LinkSpec(
            mass=1.0,
            com=[1.0, 0.0, 0.0],
            inertia=np.eye(3) * 1e-12,
            axis=[0, 1, 0],
            joint_type="revolute",
            origin=Pose.identity(),
        )
        chain = make_chain([link], gravity=(0, 0, -9.81))
        h = dynamics.bias_forces(chain, [0.0], [0.0], backend=backend)
        assert abs(abs(h[0]) - 9.81) < 1e-9

    def test_lagrangian_oracle(self, backend):
        rng = np.random.default_rng(41)

        def mm(chain, q):
            return dynamics.mass_matrix(chain, q, backend=backend)

        for _ in range(15):
            chain = random_chain(rng, n=int(rng.integers(2, 8)))
            q = rng.uniform(-1.5, 1.5, size=chain.n)
            dq = rng.uniform(-1.0, 1.0, size=chain.n)
            h = dynamics.bias_forces(chain, q, dq, backend=backend)
            h_ref = bias_forces_lagrangian(chain, q, dq, mm)
            np.testing.assert_allclose(h, h_ref, atol=1e-5)

    def test_inverse_dynamics_consistency(self, backend):
        # tau = M ddq + h must equal the full RNEA
        rng = np.random.default_rng(43)
        for _ in range(10):
            chain = random_chain(rng)
            q = rng.uniform(-1.5, 1.5, size=chain.n)
            dq = rng.uniform(-1.0, 1.0, size=chain.n)
            ddq = rng.uniform(-2.0, 2.0, size=chain.n)
            lhs = dynamics.inverse_dynamics(chain, q, dq, ddq, backend=backend)
            M = dynamics.mass_matrix(chain, q, backend=backend)
            h = dynamics.bias_forces(chain, q, dq, backend=backend)
            np.testing.assert_allclose(lhs, M @ ddq + h, atol=1e-8)


class TestTaskSpaceInertia:
    def test_prismatic_scalar_reduction(self, backend):
        from dualvic.chain import LinkSpec

        link = LinkSpec(
            mass=1.0,
            com=[0, 0, 0],
            inertia=np.eye(3) * 1e-6,
            axis=[1, 0, 0],
            joint_type="prismatic",
            origin=Pose.identity(),
        )
        chain = make_chain([link])
        M = dynamics.mass_matrix(chain, [0.1], backend=backend)
        J = dynamics.jacobian(chain, [0.1], backend=backend)
        lam = dynamics.task_space_inertia(M, J)
        assert abs(lam[0, 0] - 1.0) < 1e-6

    def test_dense_oracle_full_rank(self):
        rng = np.random.default_rng(47)
        for _ in range(20):
            n = 7
            A = rng.normal(size=(n, n))
            M = A @ A.T + n * np.eye(n)
            # well-conditioned J: singular values in [0.5, 2]
            U, _ = np.linalg.qr(rng.normal(size=(6, 6)))
            V, _ = np.linalg.qr(rng.normal(size=(n, 6)))
            J = U @ np.diag(rng.uniform(0.5, 2.0, size=6)) @ V.T
            lam = dynamics.task_space_inertia(M, J)
            ref = np.linalg.inv(J @ np.linalg.inv(M) @ J.T)
            np.testing.assert_allclose(lam, ref, rtol=1e-8, atol=1e-8)

    def test_singular_configuration_finite(self, backend):
        chain = planar_two_link()
        q = np.zeros(2)  # fully stretched
        M = dynamics.mass_matrix(chain, q, backend=backend)
        J = dynamics.jacobian(chain, q, backend=backend)
        lam = dynamics.task_space_inertia(M, J)
        assert np.all(np.isfinite(lam))
        np.testing.assert_allclose(lam, lam.T, atol=1e-9)

    def test_rejects_indefinite(self):
        M = -np.eye(3)
        with pytest.raises(ValueError):
            dynamics.task_space_inertia(M, np.ones((6, 3)))


class TestPoseError:
    def test_identity(self):
        x = Pose([0.1, 0.2, 0.3], quat_from_rotvec([0.4, -0.1, 0.2]))
        np.testing.assert_allclose(dynamics.pose_error(x, x), np.zeros(6), atol=1e-15)

    def test_quarter_turn(self):
        x = Pose.identity()
        x_r = Pose([0, 0, 0], quat_from_rotvec([0, 0, np.pi / 2]))
        np.testing.assert_allclose(
            dynamics.pose_error(x_r, x), [0, 0, 0, 0, 0, np.pi / 2], atol=1e-12
        )

    def test_log_map_oracle(self):
        rng = np.random.default_rng(53)
        for _ in range(30):
            x_r = Pose(rng.normal(size=3), quat_from_rotvec(rng.normal(scale=0.9, size=3)))
            x = Pose(rng.normal(size=3), quat_from_rotvec(rng.normal(scale=0.9, size=3)))
            err = dynamics.pose_error(x_r, x)
            R_rel = quat_to_mat(x_r.orientation) @ quat_to_mat(x.orientation).T
            np.testing.assert_allclose(err[3:], rotation_log(R_rel), atol=1e-9)
            np.testing.assert_allclose(err[:3], x_r.position - x.position, atol=1e-12)

    def test_position_antisymmetry(self):
        rng = np.random.default_rng(59)
        a = Pose(rng.normal(size=3), quat_from_rotvec(rng.normal(size=3)))
        b = Pose(rng.normal(size=3), quat_from_rotvec(rng.normal(size=3)))
        np.testing.assert_allclose(
            dynamics.pose_error(a, b)[:3], -dynamics.pose_error(b, a)[:3], atol=1e-12
        )

    def test_double_cover(self):
        q = quat_from_rotvec([0.0, 0.0, 0.4])
        a = Pose([0, 0, 0], q)
        b = Pose([0, 0, 0], -q)
        np.testing.assert_allclose(
            dynamics.pose_error(a, Pose.identity()),
            dynamics.pose_error(b, Pose.identity()),
            atol=1e-12,
        )
