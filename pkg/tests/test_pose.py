import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from contact_est.errors import InvalidArgumentError
from contact_est.pose import Pose, pose_difference, random_pose, skew

vec3 = st.lists(st.floats(-5, 5), min_size=3, max_size=3)


def test_identity_roundtrip():
    I = Pose.identity()
    np.testing.assert_array_equal(I.rotation, np.eye(3))
    np.testing.assert_array_equal(I.position, np.zeros(3))
    assert Pose.from_dict(I.to_dict()).to_dict() == I.to_dict()


def test_bad_quaternion_rejected():
    with pytest.raises(InvalidArgumentError):
        Pose([0, 0, 0], [1.0, 1.0, 0.0, 0.0])


def test_skew_matches_cross(rng):
    a, b = rng.normal(size=3), rng.normal(size=3)
    np.testing.assert_allclose(skew(a) @ b, np.cross(a, b))


@given(vec3, vec3)
def test_compose_inverse_is_identity(t, rv):
    P = Pose.from_rotvec(t, rv)
    Q = P.compose(P.inverse())
    np.testing.assert_allclose(Q.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(Q.position, np.zeros(3), atol=1e-11)


def test_compose_matches_homogeneous_matrices(rng):
    for _ in range(20):
        A, B = random_pose(rng), random_pose(rng)
        def H(P):
            M = np.eye(4)
            M[:3, :3], M[:3, 3] = P.rotation, P.position
            return M
        C = A.compose(B)
        np.testing.assert_allclose(H(C), H(A) @ H(B), atol=1e-12)


def test_perturb_and_difference_are_inverse(rng):
    P = random_pose(rng)
    d = rng.normal(scale=0.1, size=6)
    np.testing.assert_allclose(pose_difference(P.perturb(d), P), d, atol=1e-12)


def test_left_perturbation_rotates_in_world_frame():
    P = Pose([1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0])
    Q = P.perturb([0, 0, 0, 0, 0, np.pi / 2])
    np.testing.assert_allclose(Q.rotation, Rotation.from_rotvec([0, 0, np.pi / 2]).as_matrix(), atol=1e-15)
    np.testing.assert_allclose(Q.position, [1.0, 0.0, 0.0])
