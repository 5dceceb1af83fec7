"""Peg-in-hole scenes measured by a wrist force/torque sensor.

A grasped peg (body ``peg``, possibly several convex pieces) meets a
hole assembly (body ``hole``, one convex piece per wall). Every cross
pair of pieces is one contact. For a pair the growth normal ``x`` points
from the peg piece to the hole piece, so the force on the peg acts along
``n = -x``; the application point is the midpoint of the witness points.

The sensor reports ``(force; torque about its origin)`` in its own frame,
which is rigidly mounted on the gripper.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from ..contact import ContactQuery, FeatureSolverOptions, differentiate_features, solve_features
from ..errors import InvalidArgumentError
from ..estimator import EstimationProblem, MeasurementModel, PoseParametrization, StackTerms
from ..forces import contact_frame, contact_frame_derivative
from ..pose import Pose, skew
from .chain import Attachment, sample_cone_force

log = logging.getLogger(__name__)

ESTIMATOR_FEATURE_OPTIONS = FeatureSolverOptions(max_iterations=60)


@dataclass(frozen=True)
class WrenchSensor:
    """Force/torque sensor mounted at ``mount`` in the gripper frame."""

    mount: Pose = field(default_factory=Pose.identity)

    def world_pose(self, gripper_pose: Pose) -> Pose:
        return gripper_pose.compose(self.mount)


def wrench_map(sensor: WrenchSensor, gripper_pose: Pose, contact_point, frame) -> np.ndarray:
    """``6 x 3`` map from a contact-frame force to the sensor-frame wrench."""
    S = sensor.world_pose(gripper_pose)
    Rsf = S.rotation.T @ np.asarray(frame, dtype=float)
    r = S.rotation.T @ (np.asarray(contact_point, dtype=float) - S.position)
    return np.vstack([Rsf, skew(r) @ Rsf])


def wrench_map_derivative(sensor: WrenchSensor, gripper_pose: Pose, contact_point, frame,
                          dpoint, dframe) -> np.ndarray:
    """Derivative of :func:`wrench_map` along ``k`` directions.

    ``dpoint`` is ``3 x k`` and ``dframe`` is ``k x 3 x 3``; the sensor is
    held fixed. Returns ``k x 6 x 3``.
    """
    S = sensor.world_pose(gripper_pose)
    Rt = S.rotation.T
    Rsf = Rt @ np.asarray(frame, dtype=float)
    r = Rt @ (np.asarray(contact_point, dtype=float) - S.position)
    dpoint = np.asarray(dpoint, dtype=float).reshape(3, -1)
    k = dpoint.shape[1]
    out = np.empty((k, 6, 3))
    for i in range(k):
        dR = Rt @ dframe[i]
        out[i, :3] = dR
        out[i, 3:] = skew(Rt @ dpoint[:, i]) @ Rsf + skew(r) @ dR
    return out


def attached_tangent(body_pose: Pose, attach: Pose, T: np.ndarray) -> np.ndarray:
    """Tangent of ``body_pose * attach`` given the body tangent ``T`` (6 x k)."""
    a = body_pose.rotation @ attach.position
    out = T.copy()
    out[:3] -= skew(a) @ T[3:]
    return out


@dataclass(frozen=True)
class DecompositionScene:
    """Two bodies made of convex pieces; all cross pairs are contacts."""

    peg: tuple
    hole: tuple
    name: str = "scene"

    def __post_init__(self):
        object.__setattr__(self, "peg", tuple(self.peg))
        object.__setattr__(self, "hole", tuple(self.hole))
        if not self.peg or not self.hole:
            raise InvalidArgumentError("both bodies need at least one piece")

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return [(a, b) for a in range(len(self.peg)) for b in range(len(self.hole))]

    @property
    def m(self) -> int:
        return len(self.peg) * len(self.hole)

    def queries(self, peg_pose: Pose, hole_pose: Pose) -> list[ContactQuery]:
        out = []
        for a, b in self.pairs:
            pa, pb = self.peg[a], self.hole[b]
            out.append(ContactQuery(pa.shape, pb.shape, peg_pose.compose(pa.pose), hole_pose.compose(pb.pose)))
        return out


# ------------------------------------------------------- parametrizations

class GraspParametrization(PoseParametrization):
    """Grasp error in the gripper x-z plane.

    ``xi = (dx, dz, dtheta)``: the peg's position in the gripper frame is
    ``nominal.position + (dx, 0, dz)`` and its orientation is
    ``Rot_y(dtheta) * nominal.rotation``. The hole is fixed.
    """

    def __init__(self, nominal: Pose, hole_pose: Pose, lower=(-0.003, -0.003, -0.05),
                 upper=(0.003, 0.003, 0.05)):
        self.nominal = nominal
        self.hole_pose = hole_pose
        self.dimension = 3
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.description = "grasp offset (dx, dz) [m] and rotation about the finger axis [rad]"

    def grasp(self, xi) -> Pose:
        xi = np.asarray(xi, dtype=float)
        R = Pose.from_axis_angle(np.zeros(3), [0, 1, 0], xi[2]).compose(
            Pose(np.zeros(3), self.nominal.quaternion))
        return Pose(self.nominal.position + np.array([xi[0], 0.0, xi[1]]), R.quaternion)

    def poses(self, xi, context):
        G = context["gripper"]
        return {"peg": G.compose(self.grasp(xi)), "hole": self.hole_pose}

    def tangents(self, xi, context):
        RG = context["gripper"].rotation
        Tp = np.zeros((6, 3))
        Tp[:3, 0] = RG[:, 0]
        Tp[:3, 1] = RG[:, 2]
        Tp[3:, 2] = RG[:, 1]
        return {"peg": Tp, "hole": np.zeros((6, 3))}


class HoleOffsetParametrization(PoseParametrization):
    """In-plane world translation ``xi = (dx, dy)`` of the hole assembly."""

    def __init__(self, nominal_grasp: Pose, hole_pose: Pose, lower=(-0.01, -0.01), upper=(0.01, 0.01)):
        self.nominal = nominal_grasp
        self.hole_pose = hole_pose
        self.dimension = 2
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.description = "hole position offset (dx, dy) [m] in the world frame"

    def poses(self, xi, context):
        xi = np.asarray(xi, dtype=float)
        H = Pose(self.hole_pose.position + np.array([xi[0], xi[1], 0.0]), self.hole_pose.quaternion)
        return {"peg": context["gripper"].compose(self.nominal), "hole": H}

    def tangents(self, xi, context):
        Th = np.zeros((6, 2))
        Th[0, 0] = 1.0
        Th[1, 1] = 1.0
        return {"peg": np.zeros((6, 2)), "hole": Th}


# ------------------------------------------------------ measurement model

class WrenchEpisodeModel(MeasurementModel):
    """One contact episode of a scene seen by a wrist wrench sensor."""

    def __init__(self, scene: DecompositionScene, param: PoseParametrization, sensor: WrenchSensor,
                 gripper_pose: Pose, mu: float = 0.5,
                 feature_options: FeatureSolverOptions = ESTIMATOR_FEATURE_OPTIONS):
        self.scene = scene
        self.param = param
        self.sensor = sensor
        self.gripper_pose = gripper_pose
        self.mu = float(mu)
        self.feature_options = feature_options
        self.context = {"gripper": gripper_pose}
        self.n_measurements = 6
        self.n_contacts = scene.m

    def features(self, xi):
        poses = self.param.poses(xi, self.context)
        queries = self.scene.queries(poses["peg"], poses["hole"])
        return poses, queries, [solve_features(q, self.feature_options) for q in queries]

    def stack_terms(self, xi, derivatives=True):
        xi = np.asarray(xi, dtype=float)
        poses, queries, feats = self.features(xi)
        m = self.scene.m
        P = np.empty((6, 3 * m))
        gaps = np.empty(m)
        dP = np.empty((xi.shape[0], 6, 3 * m)) if derivatives else None
        dg = np.empty((m, xi.shape[0])) if derivatives else None
        if derivatives:
            T = self.param.tangents(xi, self.context)
        for k, ((a, b), q, ft) in enumerate(zip(self.scene.pairs, queries, feats)):
            n = -ft.normal
            C = contact_frame(n)
            c = ft.contact_point
            P[:, 3 * k:3 * k + 3] = wrench_map(self.sensor, self.gripper_pose, c, C)
            gaps[k] = ft.gap
            if derivatives:
                Ti = attached_tangent(poses["peg"], self.scene.peg[a].pose, T["peg"])
                Tj = attached_tangent(poses["hole"], self.scene.hole[b].pose, T["hole"])
                d = differentiate_features(ft, q)
                D = lambda M: M[:, :6] @ Ti + M[:, 6:] @ Tj  # noqa: E731
                dx = D(d.dnormal)
                dc = D(d.dcontact_point)
                dg[k] = d.dgrowth[:6] @ Ti + d.dgrowth[6:] @ Tj
                dC = contact_frame_derivative(n, -dx)
                dP[:, :, 3 * k:3 * k + 3] = wrench_map_derivative(
                    self.sensor, self.gripper_pose, c, C, dc, dC)
        return StackTerms(P=P, gaps=gaps, mu=np.full(m, self.mu), dP=dP, dgaps=dg)


# ---------------------------------------------------------------- scenes

def _prism(polygon, half_height, p, name):
    from ..geometry import ConvexSupportShape
    from ..shapes import prism_vertices

    shape, offset = ConvexSupportShape.canonical(prism_vertices(np.asarray(polygon), half_height), p, name)
    return shape, offset


def _wall_pieces(polygon, thickness, height, p):
    """One box-like wall per polygon edge, laid outside the opening.

    Each wall spans its edge extended by ``thickness`` at the leading end
    so consecutive walls close the corners without overlapping.
    """
    from ..geometry import ConvexSupportShape

    poly = np.asarray(polygon, dtype=float)
    nv = poly.shape[0]
    pieces = []
    for i in range(nv):
        a, b = poly[i], poly[(i + 1) % nv]
        e = (b - a) / np.linalg.norm(b - a)
        out = np.array([e[1], -e[0]])          # outward for a counter-clockwise polygon
        b2 = b + thickness * e
        quad = np.array([a, b2, b2 + thickness * out, a + thickness * out])
        V = np.vstack([np.column_stack([quad, np.zeros(4)]), np.column_stack([quad, -height * np.ones(4)])])
        shape, center = ConvexSupportShape.canonical(V, p, f"wall{i}")
        pieces.append(Attachment(shape, Pose(center, [1.0, 0.0, 0.0, 0.0])))
    return pieces


def rect_scene(p: float = 20.0) -> DecompositionScene:
    """Rectangular peg (8 vertices) against a 4-wall rectangular hole."""
    from ..shapes import box

    peg = [Attachment(box((0.008, 0.012, 0.03), p, "peg"))]
    opening = np.array([[-0.015, -0.016], [0.015, -0.016], [0.015, 0.016], [-0.015, 0.016]])
    return DecompositionScene(peg, _wall_pieces(opening, 0.02, 0.03, p), "rect")


def hex_scene(p: float = 20.0) -> DecompositionScene:
    """Hexagonal peg (12 vertices) against a 6-wall hexagonal hole."""
    from ..shapes import regular_polygon

    peg = [Attachment(_prism(regular_polygon(6, 0.01), 0.03, p, "peg")[0])]
    return DecompositionScene(peg, _wall_pieces(regular_polygon(6, 0.014), 0.02, 0.03, p), "hex")


def star_scene(p: float = 20.0) -> DecompositionScene:
    """Five-piece star peg against a five-wall hole (25 pairs)."""
    from ..shapes import regular_polygon

    pieces = []
    core = regular_polygon(5, 0.006, np.pi / 2)
    for i in range(5):
        a, b = core[i], core[(i + 1) % 5]
        mid = 0.5 * (a + b)
        tip = mid / np.linalg.norm(mid) * 0.014
        tri = np.array([a, b, tip, [0.0, 0.0]])
        shape, center = _prism(tri, 0.03, p, f"arm{i}")
        pieces.append(Attachment(shape, Pose(center, [1.0, 0.0, 0.0, 0.0])))
    hole = _wall_pieces(regular_polygon(5, 0.02, np.pi / 2), 0.02, 0.03, p)
    return DecompositionScene(pieces, hole, "star")


SCENES = {"rect": rect_scene, "hex": hex_scene, "star": star_scene}


# ------------------------------------------------------ synthetic episodes

@dataclass(frozen=True)
class EpisodeScript:
    """Gripper start pose and the direction it moves until first touch."""

    start: Pose
    approach: np.ndarray


def min_gap(scene, param, gripper_pose, xi, options=ESTIMATOR_FEATURE_OPTIONS) -> float:
    poses = param.poses(xi, {"gripper": gripper_pose})
    return min(solve_features(q, options).gap for q in scene.queries(poses["peg"], poses["hole"]))


def resolve_touch(scene, param, script: EpisodeScript, xi, max_travel: float = 0.1) -> Pose:
    """Gripper pose on the script's approach line where the bodies first touch."""
    d = np.asarray(script.approach, dtype=float)
    d = d / np.linalg.norm(d)

    def at(s):
        return Pose(script.start.position + s * d, script.start.quaternion)

    def gfun(s):
        return min_gap(scene, param, at(s), xi)

    if gfun(0.0) <= 0.0:
        raise InvalidArgumentError("episode start pose is already in contact")
    lo, hi, step = 0.0, None, max_travel / 64
    s = step
    while s <= max_travel:
        if gfun(s) <= 0.0:
            hi = s
            break
        lo = s
        s += step
    if hi is None:
        raise InvalidArgumentError("approach never reaches contact")
    s = scipy.optimize.brentq(gfun, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    # land on the separated side so the penetration penalty is silent
    while gfun(s) < 0.0:
        s = np.nextafter(s, -np.inf)
    return at(s)


@dataclass
class SyntheticEpisode:
    gripper: Pose
    gamma: np.ndarray
    forces: np.ndarray
    active: np.ndarray


def generate_synthetic(scene: DecompositionScene, param: PoseParametrization, sensor: WrenchSensor,
                       xi_true, scripts, noise_sigma: float = 0.0, seed: int = 0, mu: float = 0.5,
                       eps: float = 1e-8, active_tol: float = 1e-9) -> list[SyntheticEpisode]:
    """Forward-generate wrench measurements at ``xi_true``.

    Each script is resolved to its first-touch gripper pose. Touching
    pairs get a random force strictly inside the friction cone; the
    others carry the smallest admissible force of the smoothed cone,
    ``(0, 0, sqrt(eps)/mu)``, which keeps the data exactly representable
    by the estimator's forward model. No force optimization is involved.
    """
    rng = np.random.default_rng(seed)
    xi_true = np.asarray(xi_true, dtype=float)
    out = []
    for script in scripts:
        G = resolve_touch(scene, param, script, xi_true)
        poses = param.poses(xi_true, {"gripper": G})
        feats = [solve_features(q, ESTIMATOR_FEATURE_OPTIONS) for q in scene.queries(poses["peg"], poses["hole"])]
        gaps = np.array([f.gap for f in feats])
        active = gaps <= active_tol
        f = np.zeros((scene.m, 3))
        f[:, 2] = np.sqrt(eps) / mu
        if not np.any(active):
            log.warning("episode produced no active contact; emitting a zero wrench")
        for k in np.flatnonzero(active):
            f[k] = sample_cone_force(rng, mu)
        gamma = np.zeros(6)
        for k, ft in enumerate(feats):
            C = contact_frame(-ft.normal)
            gamma += wrench_map(sensor, G, ft.contact_point, C) @ f[k]
        out.append(SyntheticEpisode(G, gamma, f, active))
    if noise_sigma > 0:
        for ep in out:
            ep.gamma = ep.gamma + rng.normal(0.0, noise_sigma, 6)
    return out


def build_problem(scene, param, sensor, grippers, gammas, mu=0.5, **kwargs) -> EstimationProblem:
    models = [WrenchEpisodeModel(scene, param, sensor, G, mu) for G in grippers]
    return EstimationProblem(param, models, gammas, **kwargs)


DEFAULT_GRASP = Pose([0.0, 0.0, -0.06], [1.0, 0.0, 0.0, 0.0])


def default_scripts(scene_name: str = "rect") -> list[EpisodeScript]:
    """Three first-touch episodes: two wall tops and one inner wall face.

    The gripper frame is world-aligned and the nominal peg hangs 6 cm
    below it, so the peg bottom starts 1 cm above the hole top.
    """
    I = [1.0, 0.0, 0.0, 0.0]
    z = 0.06 + 0.03 + 0.01
    return [
        EpisodeScript(Pose([0.014, 0.0, z], I), np.array([0.0, 0.0, -1.0])),
        EpisodeScript(Pose([-0.014, 0.0, z], I), np.array([0.0, 0.0, -1.0])),
        EpisodeScript(Pose([0.0, 0.0, z - 0.02], I), np.array([1.0, 0.0, 0.0])),
    ]
