import numpy as np
import pytest
from scipy.linalg import expm
from scipy.spatial import Delaunay

from contact_est import estimator as E
from contact_est.errors import InvalidArgumentError
from contact_est.forces import cone_residual, contact_frame
from contact_est.geometry import support_world
from contact_est.pose import Pose, skew
from contact_est.scenarios import chain as C
from contact_est.scenarios import peg as PG
from contact_est.cli import resolve_config
from contact_est.scenarios.config import load_scenario


# ------------------------------------------------------------ kinematics

def poe_link_pose(chain, q, link):
    """Product-of-exponentials forward kinematics built from the zero configuration."""
    zero = C.forward_kinematics(chain, np.zeros(chain.n_joints))
    Z, O = C.joint_axes(chain, np.zeros(chain.n_joints))
    T = np.eye(4)
    for j in range(link):
        tw = np.zeros((4, 4))
        tw[:3, :3] = skew(Z[j])
        tw[:3, 3] = -np.cross(Z[j], O[j])
        T = T @ expm(tw * q[j])
    M = np.eye(4)
    M[:3, :3] = zero[link].rotation
    M[:3, 3] = zero[link].position
    return T @ M


@pytest.mark.parametrize("make", [C.three_link_chain, C.seven_joint_chain])
def test_forward_kinematics_matches_product_of_exponentials(make, rng):
    chain = make()
    for _ in range(5):
        q = rng.uniform(-np.pi, np.pi, chain.n_joints)
        links = C.forward_kinematics(chain, q)
        for k in range(chain.n_joints + 1):
            T = poe_link_pose(chain, q, k)
            np.testing.assert_allclose(links[k].rotation, T[:3, :3], atol=1e-12)
            np.testing.assert_allclose(links[k].position, T[:3, 3], atol=1e-12)


def test_forward_kinematics_zero_and_quarter_turn():
    chain = C.three_link_chain()
    links = C.forward_kinematics(chain, np.zeros(6))
    np.testing.assert_allclose(links[-1].position, [0.55, 0.0, 0.1], atol=1e-15)
    q = np.zeros(6)
    q[0] = np.pi / 2  # base yaw swings the arm onto the y axis
    np.testing.assert_allclose(C.forward_kinematics(chain, q)[-1].position, [0.0, 0.55, 0.1], atol=1e-15)


def test_point_jacobian_finite_differences(rng):
    chain = C.seven_joint_chain()
    q = rng.uniform(-np.pi, np.pi, 7)
    for link in range(8):
        local = rng.normal(size=3) * 0.1
        p = C.forward_kinematics(chain, q)[link].transform_point(local)
        J = C.point_jacobian(chain, q, link, p)
        for j in range(7):
            e = np.zeros(7)
            e[j] = 1e-6
            fd = (C.forward_kinematics(chain, q + e)[link].transform_point(local)
                  - C.forward_kinematics(chain, q - e)[link].transform_point(local)) / 2e-6
            np.testing.assert_allclose(J[j], fd, atol=1e-9)
    assert not C.point_jacobian(chain, q, 0, [1.0, 2.0, 3.0]).any()


def test_force_along_joint_axis_gives_zero_torque(rng):
    chain = C.three_link_chain()
    q = rng.uniform(-1, 1, 6)
    Z, O = C.joint_axes(chain, q)
    for j in range(6):
        tau = C.point_jacobian(chain, q, 6, O[j] + 0.3 * Z[j]) @ Z[j]
        assert abs(tau[j]) <= 1e-15


def test_chain_validation():
    chain = C.three_link_chain()
    with pytest.raises(InvalidArgumentError):
        chain.check_q(np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        chain.check_link(7)
    with pytest.raises(InvalidArgumentError):
        C.Joint([0, 0, 0], Pose.identity())
    with pytest.raises(InvalidArgumentError):
        C.LocalizationParametrization(chain, np.zeros(6), 1)  # link 1 carries no shape


# ----------------------------------------------------------- localization

def localization(rng):
    chain = C.three_link_chain()
    param = C.LocalizationParametrization(chain, rng.uniform(-1, 1, 6), 6)
    return param, C.JointTorqueModel(param, mu=0.5)


def test_contact_point_lies_on_surface(rng):
    param, _ = localization(rng)
    for _ in range(10):
        xi = rng.normal(size=3)
        u = xi / np.linalg.norm(xi)
        c = param.contact_point(xi)
        h, s = support_world(param.attachment.shape, param.shape_pose, u)
        assert u @ c == pytest.approx(h, rel=1e-12)
        np.testing.assert_allclose(c, s, atol=1e-15)


def test_localization_depends_only_on_direction(rng):
    _, model = localization(rng)
    xi = rng.normal(size=3)
    a, b = model.stack_terms(xi), model.stack_terms(3.7 * xi)
    np.testing.assert_allclose(a.P, b.P, atol=1e-14)
    # radial derivative vanishes
    np.testing.assert_allclose(np.einsum("i,ijk->jk", xi, a.dP), 0.0, atol=1e-12)


def test_localization_stack_derivative(rng):
    _, model = localization(rng)
    xi = rng.normal(size=3)
    t = model.stack_terms(xi)
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1e-6
        fd = (model.stack_terms(xi + e, False).P - model.stack_terms(xi - e, False).P) / 2e-6
        np.testing.assert_allclose(t.dP[i], fd, atol=1e-7 * (1 + np.abs(fd).max()))


def test_localization_recovers_point(rng):
    param, model = localization(rng)
    hits = 0
    for k in range(5):
        truth = rng.normal(size=3)
        tau = C.synthesize_torques(model, truth, C.sample_cone_force(rng, model.mu))
        prob = E.EstimationProblem(param, [model], [tau], k0=1e2)
        res = E.estimate(prob, n_starts=10, seed=k)
        hits += np.linalg.norm(param.contact_point(res.xi) - param.contact_point(truth)) <= 1e-3
    assert hits >= 4


def test_cone_force_sampler_is_interior(rng):
    for _ in range(100):
        f = C.sample_cone_force(rng, 0.4)
        assert 1.0 <= f[2] <= 20.0
        assert np.hypot(f[0], f[1]) <= 0.8 * 0.4 * f[2]


# ---------------------------------------------------------------- wrench

def test_wrench_map_simple_cases():
    S = PG.WrenchSensor()
    W = PG.wrench_map(S, Pose.identity(), np.zeros(3), np.eye(3))
    np.testing.assert_allclose(W, np.vstack([np.eye(3), np.zeros((3, 3))]))
    W = PG.wrench_map(S, Pose.identity(), [1.0, 0, 0], np.eye(3))
    np.testing.assert_allclose(W @ [0, 0, 1.0], [0, 0, 1, 0, -1, 0])
    # a sensor turned half way about z sees x forces reversed
    G = Pose.from_axis_angle(np.zeros(3), [0, 0, 1], np.pi)
    np.testing.assert_allclose(PG.wrench_map(S, G, np.zeros(3), np.eye(3))[:3, 0], [-1, 0, 0], atol=1e-15)


def test_wrench_map_derivative(rng):
    S = PG.WrenchSensor(Pose([0, 0, 0.02], [1.0, 0, 0, 0]))
    G = Pose.from_rotvec(rng.normal(size=3), rng.normal(size=3))
    c = rng.normal(size=3)
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    dc = rng.normal(size=(3, 2))
    dn = rng.normal(size=(3, 2))
    dn -= np.outer(n, n @ dn)
    from contact_est.forces import contact_frame_derivative
    dW = PG.wrench_map_derivative(S, G, c, contact_frame(n), dc, contact_frame_derivative(n, dn))
    for i in range(2):
        def W(h):
            nn = n + h * dn[:, i]
            return PG.wrench_map(S, G, c + h * dc[:, i], contact_frame(nn / np.linalg.norm(nn)))
        np.testing.assert_allclose(dW[i], (W(1e-6) - W(-1e-6)) / 2e-6, atol=1e-7)


@pytest.mark.parametrize("name,m", [("rect", 4), ("hex", 6), ("star", 25)])
def test_scene_pair_counts(name, m):
    scene = PG.SCENES[name]()
    assert scene.m == m == len(scene.pairs)


def point_in_polygon(pt, poly):
    inside = False
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        if (a[1] > pt[1]) != (b[1] > pt[1]):
            x = a[0] + (pt[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            inside ^= pt[0] < x
    return inside


def test_star_pieces_cover_star_outline():
    from contact_est.shapes import regular_polygon

    scene = PG.star_scene()
    core = regular_polygon(5, 0.006, np.pi / 2)
    outline = []
    for i in range(5):
        a, b = core[i], core[(i + 1) % 5]
        mid = 0.5 * (a + b)
        outline += [a, mid / np.linalg.norm(mid) * 0.014]
    outline = np.array(outline)
    hulls = [Delaunay(att.shape.vertices + att.pose.position) for att in scene.peg]
    g = np.linspace(-0.015, 0.015, 61)
    for x in g:
        for y in g:
            if point_in_polygon((x, y), outline):
                assert any(h.find_simplex([x, y, 0.0]) >= 0 for h in hulls), (x, y)


def test_hole_walls_leave_opening_free_and_close_the_ring():
    from contact_est.shapes import regular_polygon

    scene = PG.hex_scene()
    poly = regular_polygon(6, 0.014)
    hulls = [Delaunay(att.shape.vertices + att.pose.position) for att in scene.hole]
    rng = np.random.default_rng(0)
    for _ in range(400):
        ang = rng.uniform(0, 2 * np.pi)
        d = np.array([np.cos(ang), np.sin(ang)])
        # distance from the center to the opening boundary along d
        r = min(t for t in np.linspace(0, 0.03, 3001) if not point_in_polygon(t * d, poly))
        for t, inside in ((0.95 * r, False), (r + 0.005, True)):
            pt = np.append(t * d, -0.015)
            assert any(h.find_simplex(pt) >= 0 for h in hulls) == inside


# ------------------------------------------------------- parametrizations

def test_zero_parameter_gives_nominal_poses():
    G = Pose([0.1, 0.2, 0.3], [1.0, 0, 0, 0])
    nom = PG.DEFAULT_GRASP
    hole = Pose([0.0, 0.0, 0.0], [1.0, 0, 0, 0])
    g = PG.GraspParametrization(nom, hole)
    np.testing.assert_allclose(g.grasp(np.zeros(3)).position, nom.position)
    np.testing.assert_allclose(g.poses(np.zeros(3), {"gripper": G})["peg"].position, G.compose(nom).position)
    h = PG.HoleOffsetParametrization(nom, hole)
    np.testing.assert_allclose(h.poses(np.zeros(2), {"gripper": G})["hole"].position, hole.position)


def test_parametrization_tangents(rng):
    G = Pose.from_rotvec(rng.normal(size=3), rng.normal(size=3))
    hole = Pose.identity()
    for param, n in ((PG.GraspParametrization(PG.DEFAULT_GRASP, hole), 3),
                     (PG.HoleOffsetParametrization(PG.DEFAULT_GRASP, hole), 2)):
        assert E.tangent_check(param, 0.001 * rng.normal(size=n), {"gripper": G}) <= 1e-6


# ---------------------------------------------------------- end to end

def test_synthetic_episodes_are_consistent():
    sc = load_scenario(resolve_config("peg_rect", "estimate"))
    eps = sc.synthesize()
    assert len(eps) == 3
    prob = sc.problem(eps)
    ev = E.evaluate(prob, sc.truth["xi"], jacobian=False)
    assert sum(ev.residual[ev.blocks[f"measurement[{e}]"]].shape[0] for e in range(3)) == 18
    assert ev.cost <= 1e-14
    for st in ev.stacks:
        assert st.gaps.min() >= 0.0 and st.gaps.min() <= 1e-9


def test_first_touch_lands_at_zero_gap():
    scene = PG.rect_scene()
    param = PG.GraspParametrization(PG.DEFAULT_GRASP, Pose.identity())
    xi = np.array([0.001, -0.002, 0.02])
    script = PG.default_scripts()[0]
    G = PG.resolve_touch(scene, param, script, xi)
    assert 0.0 <= PG.min_gap(scene, param, G, xi) <= 1e-12
    far = PG.EpisodeScript(script.start, np.array([0.0, 0.0, 1.0]))
    with pytest.raises(InvalidArgumentError):
        PG.resolve_touch(scene, param, far, xi)


def test_synthetic_active_forces_inside_cone():
    scene = PG.rect_scene()
    param = PG.GraspParametrization(PG.DEFAULT_GRASP, Pose.identity())
    eps = PG.generate_synthetic(scene, param, PG.WrenchSensor(), np.zeros(3), PG.default_scripts(), seed=5)
    for ep in eps:
        assert ep.active.any()
        for k, f in enumerate(ep.forces):
            c = cone_residual(f, 0.5, 1e-8)
            assert c > 0 if ep.active[k] else abs(c) <= 1e-15
