"""Serial revolute chains and single-point contact localization from joint torques.

Link 0 is the base. Link ``k`` (``k >= 1``) follows joint ``k``::

    T_k = T_{k-1} * origin_k * Rot(axis_k, q_k)

A contact force ``F`` (world frame) applied at world point ``c`` on link
``l`` produces the joint torques ``tau = J_c^T F`` where row ``j`` of
:func:`point_jacobian` is ``z_j x (c - o_j)`` for joints ``j <= l``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError
from ..estimator import MeasurementModel, PoseParametrization, StackTerms
from ..forces import contact_frame, contact_frame_derivative
from ..geometry import ConvexSupportShape, support_world, support_world_derivatives
from ..pose import Pose


@dataclass(frozen=True)
class Joint:
    axis: np.ndarray
    origin: Pose

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float).reshape(3)
        n = np.linalg.norm(a)
        if not n > 0 or not np.isfinite(n):
            raise InvalidArgumentError("joint axis must be a nonzero finite vector")
        object.__setattr__(self, "axis", a / n)


@dataclass(frozen=True)
class Attachment:
    """A shape rigidly attached to a body at ``pose`` (body frame)."""

    shape: ConvexSupportShape
    pose: Pose = field(default_factory=Pose.identity)


@dataclass(frozen=True)
class SerialChain:
    """Revolute chain; ``links`` has one entry per joint plus the base."""

    joints: tuple
    links: tuple
    base: Pose = field(default_factory=Pose.identity)
    name: str = "chain"

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "links", tuple(tuple(l) for l in self.links))
        if len(self.links) != len(self.joints) + 1:
            raise InvalidArgumentError(
                f"need {len(self.joints) + 1} links (base plus one per joint), got {len(self.links)}"
            )

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def check_q(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape[0] != self.n_joints:
            raise InvalidArgumentError(f"q has length {q.shape[0]}, chain has {self.n_joints} joints")
        return q

    def check_link(self, link: int) -> int:
        if not 0 <= int(link) <= self.n_joints:
            raise InvalidArgumentError(f"link index {link} outside 0..{self.n_joints}")
        return int(link)


def _joint_frames(chain: SerialChain, q):
    """World frames of each joint before its rotation, and the link poses."""
    q = chain.check_q(q)
    links = [chain.base]
    frames = []
    T = chain.base
    for joint, qk in zip(chain.joints, q):
        F = T.compose(joint.origin)
        frames.append(F)
        T = F.compose(Pose.from_axis_angle(np.zeros(3), joint.axis, qk)) if qk != 0.0 else F
        links.append(T)
    return frames, links


def forward_kinematics(chain: SerialChain, q) -> list[Pose]:
    """World poses of every link frame (base first)."""
    return _joint_frames(chain, q)[1]


def point_jacobian(chain: SerialChain, q, link: int, point) -> np.ndarray:
    """``n_joints x 3`` map whose transpose is the point's linear-velocity Jacobian.

    Row ``j`` is ``z_j x (point - o_j)`` for joints moving ``link`` and
    zero otherwise, so ``tau = point_jacobian @ F`` for a world force ``F``.
    """
    link = chain.check_link(link)
    frames, _ = _joint_frames(chain, q)
    p = np.asarray(point, dtype=float).reshape(3)
    out = np.zeros((chain.n_joints, 3))
    for j in range(link):
        F = frames[j]
        z = F.rotation @ chain.joints[j].axis
        out[j] = np.cross(z, p - F.position)
    return out


def joint_axes(chain: SerialChain, q):
    """World axis and origin of every joint at ``q``."""
    frames, _ = _joint_frames(chain, q)
    Z = np.array([F.rotation @ j.axis for F, j in zip(frames, chain.joints)])
    O = np.array([F.position for F in frames])
    return Z, O


# ----------------------------------------------------------- localization

class LocalizationParametrization(PoseParametrization):
    """Contact location on one link shape as an unnormalized direction.

    ``xi`` in R^3 selects the smoothed-surface point whose outward normal
    is ``xi / |xi|``. No body moves with ``xi``, so the pose tangents
    are zero; the contact point and its derivative are exposed directly.
    """

    def __init__(self, chain: SerialChain, q, link: int, shape_index: int = 0,
                 lower=(-1.0, -1.0, -1.0), upper=(1.0, 1.0, 1.0), min_norm: float = 1e-3):
        link = chain.check_link(link)
        if not chain.links[link]:
            raise InvalidArgumentError(f"link {link} carries no shape")
        self.chain = chain
        self.q = chain.check_q(q).copy()
        self.link = link
        self.attachment = chain.links[link][shape_index]
        self.link_pose = forward_kinematics(chain, self.q)[link]
        self.shape_pose = self.link_pose.compose(self.attachment.pose)
        self.dimension = 3
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.min_norm = float(min_norm)
        self.description = f"contact direction on link {link} of {chain.name}"

    def check(self, xi):
        super().check(xi)
        if np.linalg.norm(xi) <= 1e-12:
            raise InvalidArgumentError("direction parameter must be nonzero")

    def sample(self, rng, n):
        out = np.empty((n, 3))
        k = 0
        while k < n:
            x = rng.uniform(self.lower, self.upper)
            if np.linalg.norm(x) > self.min_norm:
                out[k] = x
                k += 1
        return out

    def poses(self, xi, context=None):
        return {"link": self.link_pose}

    def tangents(self, xi, context=None):
        return {"link": np.zeros((6, 3))}

    def contact_point(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return support_world(self.attachment.shape, self.shape_pose, xi / np.linalg.norm(xi))[1]

    def contact_point_derivative(self, xi):
        """``(c, dc/dxi, u, du/dxi)``."""
        xi = np.asarray(xi, dtype=float)
        r = np.linalg.norm(xi)
        u = xi / r
        du = (np.eye(3) - np.outer(u, u)) / r
        c = support_world(self.attachment.shape, self.shape_pose, u)[1]
        Dw, _ = support_world_derivatives(self.attachment.shape, self.shape_pose, u)
        return c, Dw @ du, u, du


class JointTorqueModel(MeasurementModel):
    """Single external contact measured by joint torques.

    The contact frame normal is the inward surface normal ``-u``, so an
    admissible force pushes on the link. The gap is fixed at zero.
    """

    def __init__(self, param: LocalizationParametrization, mu: float = 0.5):
        self.param = param
        self.mu = float(mu)
        self.n_measurements = param.chain.n_joints
        self.n_contacts = 1
        Z, O = joint_axes(param.chain, param.q)
        self._Z = Z[:param.link]
        self._O = O[:param.link]

    def _jac(self, c):
        out = np.zeros((self.n_measurements, 3))
        out[:self.param.link] = np.cross(self._Z, c - self._O)
        return out

    def stack_terms(self, xi, derivatives=True):
        c, dc, u, du = self.param.contact_point_derivative(xi)
        n = -u
        C = contact_frame(n)
        Jp = self._jac(c)
        P = Jp @ C
        if not derivatives:
            return StackTerms(P=P, gaps=np.zeros(1), mu=np.array([self.mu]), info={"point": c})
        dC = contact_frame_derivative(n, -du)
        dP = np.empty((3, self.n_measurements, 3))
        for i in range(3):
            dJ = np.zeros_like(Jp)
            dJ[:self.param.link] = np.cross(self._Z, dc[:, i])
            dP[i] = dJ @ C + Jp @ dC[i]
        return StackTerms(P=P, gaps=np.zeros(1), mu=np.array([self.mu]), dP=dP,
                          dgaps=np.zeros((1, 3)), info={"point": c})


def sample_cone_force(rng: np.random.Generator, mu: float, magnitude=(1.0, 20.0),
                      tangent_fraction: float = 0.8) -> np.ndarray:
    """Contact-frame force strictly inside the friction cone.

    The normal component is uniform on ``magnitude``; the tangential part
    has uniform direction and magnitude up to ``tangent_fraction * mu * f_n``.
    """
    fn = rng.uniform(*magnitude)
    ang = rng.uniform(0.0, 2.0 * np.pi)
    ft = tangent_fraction * mu * fn * np.sqrt(rng.uniform())
    return np.array([ft * np.cos(ang), ft * np.sin(ang), fn])


def synthesize_torques(model: JointTorqueModel, xi_true, force, noise_sigma: float = 0.0,
                       rng: np.random.Generator | None = None) -> np.ndarray:
    """Joint torques of a contact-frame ``force`` applied at ``xi_true``."""
    xi_true = np.asarray(xi_true, dtype=float)
    c = model.param.contact_point(xi_true)
    C = contact_frame(-xi_true / np.linalg.norm(xi_true))
    tau = point_jacobian(model.param.chain, model.param.q, model.param.link, c) @ (C @ force)
    if noise_sigma > 0:
        rng = rng or np.random.default_rng(0)
        tau = tau + rng.normal(0.0, noise_sigma, tau.shape)
    return tau


# ------------------------------------------------------------- fixtures

def _link_box(length: float, half_width: float, p: float) -> Attachment:
    from ..shapes import box

    return Attachment(box((0.5 * length, half_width, half_width), p, "link"),
                      Pose([0.5 * length, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]))


def three_link_chain(p: float = 20.0) -> SerialChain:
    """Three shaped links, each driven by a pair of revolute joints.

    Six joints keep the joint-torque map onto a link wrench invertible at
    generic configurations, which single-point localization needs.
    """
    I = [1.0, 0.0, 0.0, 0.0]
    z, y, x = [0, 0, 1], [0, 1, 0], [1, 0, 0]
    joints = [
        Joint(z, Pose([0, 0, 0.1], I)), Joint(y, Pose([0, 0, 0], I)),
        Joint(y, Pose([0.3, 0, 0], I)), Joint(x, Pose([0, 0, 0], I)),
        Joint(y, Pose([0.25, 0, 0], I)), Joint(z, Pose([0, 0, 0], I)),
    ]
    links = [[], [], [_link_box(0.3, 0.03, p)], [], [_link_box(0.25, 0.025, p)], [],
             [_link_box(0.15, 0.02, p)]]
    return SerialChain(joints, links, name="three_link")


def seven_joint_chain(p: float = 20.0) -> SerialChain:
    """Seven alternating-axis joints with a shaped link after each."""
    I = [1.0, 0.0, 0.0, 0.0]
    z, y = [0, 0, 1], [0, 1, 0]
    axes = [z, y, z, y, z, y, z]
    offsets = [[0, 0, 0.15], [0, 0, 0], [0.3, 0, 0], [0, 0, 0], [0.3, 0, 0], [0, 0, 0], [0.1, 0, 0]]
    lengths = [0.05, 0.3, 0.05, 0.3, 0.05, 0.1, 0.08]
    joints = [Joint(a, Pose(o, I)) for a, o in zip(axes, offsets)]
    links = [[]] + [[_link_box(L, 0.03, p)] for L in lengths]
    return SerialChain(joints, links, name="seven_joint")
