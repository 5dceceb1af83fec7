"""Scenario and measurement files.

A scenario is a JSON object. Peg scenes (``"scenario": "peg"``)::

    {
      "scenario": "peg",
      "smoothness": 20,
      "bodies": {"peg": {"grasp": POSE}, "hole": {"pose": POSE}},
      "decomposition": {"peg": [PIECE, ...], "hole": [PIECE, ...]},
      "sensor": {"type": "wrench", "mount": POSE},
      "parametrization": {"type": "grasp" | "hole_offset", "lower": [...], "upper": [...]},
      "episodes": [{"gripper": POSE, "approach": [0, 0, -1]}, ...],
      "friction": 0.5, "k0": 1e4, "k1": 1e6, "eps": 1e-8,
      "noise": {"sigma": 0.0, "covariance": 1.0},
      "truth": {"xi": [...], "seed": 0}
    }

Localization scenes (``"scenario": "localization"``) replace bodies,
decomposition and episodes by ``chain`` (``joints``: list of ``{"axis",
"origin"}``; ``links``: one list of PIECE per link, base first), ``q``
and ``link``; the sensor type is ``joint_torque``.

``POSE`` is ``{"position": [...], "quaternion": [w, x, y, z]}`` (or
``"rotvec"``); ``PIECE`` is ``{"geometry": GEOM, "pose": POSE}`` where
``GEOM`` is ``{"file": path}`` (relative to the scenario file),
``{"box": [hx, hy, hz]}`` or ``{"vertices": [[x, y, z], ...]}``.
File-referenced shapes are recentered and the offset is folded into the
piece pose.

Episodes are stacked in file order. A measurement file is a JSON array
with one entry per episode: either a plain gamma vector (the gripper
pose then comes from the scenario episode) or an object
``{"gamma": [...], "gripper": POSE}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import GeometryFileError, InvalidArgumentError
from ..geometry import DEFAULT_SMOOTHNESS, ConvexSupportShape, load_geometry
from ..pose import Pose
from ..shapes import box_vertices
from .chain import Attachment, Joint, JointTorqueModel, LocalizationParametrization, SerialChain
from .peg import (
    DecompositionScene, EpisodeScript, GraspParametrization, HoleOffsetParametrization,
    WrenchSensor, build_problem,
)


def _line_of(text: str, key: str, start: int = 1) -> int | None:
    needle = f'"{key}"'
    for lineno, line in enumerate(text.splitlines()[start - 1:], start=start):
        if needle in line:
            return lineno
    return None


class _Doc:
    """JSON text with line lookup for error messages."""

    def __init__(self, text: str, path: str):
        self.text = text
        self.path = path
        try:
            self.data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise GeometryFileError(f"invalid JSON: {exc.msg}", path, exc.lineno) from exc

    def error(self, message: str, key: str | None = None) -> GeometryFileError:
        line = _line_of(self.text, key) if key else None
        return GeometryFileError(message, self.path, line)

    def get(self, obj: dict, key: str, kind=None, default=...):
        if not isinstance(obj, dict):
            raise self.error(f"expected an object holding '{key}'", key)
        if key not in obj:
            if default is not ...:
                return default
            raise self.error(f"missing field '{key}'")
        val = obj[key]
        if kind is not None and not isinstance(val, kind):
            raise self.error(f"field '{key}' has the wrong type", key)
        return val

    def vector(self, obj, key, n=None, default=...):
        val = self.get(obj, key, default=default)
        if val is default and default is not ...:
            return None if default is None else np.asarray(default, dtype=float)
        try:
            arr = np.asarray(val, dtype=float)
        except (TypeError, ValueError):
            raise self.error(f"field '{key}' must be numeric", key) from None
        if arr.ndim != 1 or (n is not None and arr.shape[0] != n) or not np.all(np.isfinite(arr)):
            raise self.error(f"field '{key}' must be a finite vector" + (f" of length {n}" if n else ""), key)
        return arr

    def number(self, obj, key, default=...):
        val = self.get(obj, key, default=default)
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise self.error(f"field '{key}' must be a number", key)
        return float(val)

    def pose(self, obj, key, default=...):
        val = self.get(obj, key, dict, default=default)
        if val is default:
            return Pose.identity() if default is None else default
        try:
            return Pose.from_dict(val)
        except (InvalidArgumentError, TypeError, ValueError) as exc:
            raise self.error(f"field '{key}': {exc}", key) from None


def _piece(doc: _Doc, item, base: Path, p: float) -> Attachment:
    geom = doc.get(item, "geometry", dict)
    pose = doc.pose(item, "pose", default=None)
    try:
        if "file" in geom:
            shape, offset = load_geometry(base / geom["file"])
            if p is not None:
                shape = shape.with_smoothness(p)
            pose = pose.compose(Pose(offset, [1.0, 0.0, 0.0, 0.0]))
        elif "box" in geom:
            shape = ConvexSupportShape(box_vertices(doc.vector(geom, "box", 3)), p, "box")
        elif "vertices" in geom:
            shape, offset = ConvexSupportShape.canonical(np.asarray(geom["vertices"], dtype=float), p,
                                                         str(geom.get("name", "")))
            pose = pose.compose(Pose(offset, [1.0, 0.0, 0.0, 0.0]))
        else:
            raise doc.error("geometry needs 'file', 'box' or 'vertices'", "geometry")
    except GeometryFileError:
        raise
    except (InvalidArgumentError, TypeError, ValueError) as exc:
        raise doc.error(f"bad geometry: {exc}", "geometry") from None
    return Attachment(shape, pose)


@dataclass
class Scenario:
    """Everything needed to synthesize data for and estimate one scene."""

    kind: str
    parametrization: object
    scripts: list
    sensor: object = None
    scene: DecompositionScene | None = None
    chain: SerialChain | None = None
    friction: float = 0.5
    k0: float = 1e4
    k1: float = 1e6
    eps: float = 1e-8
    noise_sigma: float = 0.0
    covariance: object = 1.0
    truth: dict = field(default_factory=dict)
    path: str = "<string>"

    def synthesize(self, xi=None, seed: int | None = None, noise_sigma: float | None = None) -> list[dict]:
        """Forward-generated measurements at ``xi`` (default: the config truth)."""
        xi = self.truth.get("xi") if xi is None else np.asarray(xi, dtype=float)
        if xi is None:
            raise InvalidArgumentError("no ground-truth parameter given")
        seed = self.truth.get("seed", 0) if seed is None else seed
        sigma = self.noise_sigma if noise_sigma is None else noise_sigma
        self.parametrization.check(xi)
        if self.kind == "localization":
            from .chain import sample_cone_force, synthesize_torques

            rng = np.random.default_rng(seed)
            model = JointTorqueModel(self.parametrization, self.friction)
            tau = synthesize_torques(model, xi, sample_cone_force(rng, self.friction), sigma, rng)
            return [{"gamma": tau, "gripper": None}]
        from .peg import generate_synthetic

        eps = generate_synthetic(self.scene, self.parametrization, self.sensor, xi, self.scripts,
                                 sigma, seed, self.friction, self.eps)
        return [{"gamma": e.gamma, "gripper": e.gripper} for e in eps]

    def problem(self, measurements):
        """Estimation problem for ``measurements`` (see :func:`parse_measurements`)."""
        if self.kind == "localization":
            model = JointTorqueModel(self.parametrization, self.friction)
            return _problem([model] * len(measurements), [m["gamma"] for m in measurements], self)
        grippers = []
        for e, m in enumerate(measurements):
            if m.get("gripper") is not None:
                grippers.append(m["gripper"])
            elif e < len(self.scripts):
                grippers.append(self.scripts[e].start)
            else:
                raise InvalidArgumentError(f"measurement {e} has no gripper pose and no matching episode")
        return build_problem(self.scene, self.parametrization, self.sensor, grippers,
                             [m["gamma"] for m in measurements], mu=self.friction,
                             Sigma=self.covariance, k0=self.k0, k1=self.k1, eps=self.eps)


def _problem(models, gammas, sc):
    from ..estimator import EstimationProblem

    return EstimationProblem(sc.parametrization, models, gammas, Sigma=sc.covariance,
                             k0=sc.k0, k1=sc.k1, eps=sc.eps)


def parse_scenario(text: str, path: str = "<string>") -> Scenario:
    doc = _Doc(text, path)
    d = doc.data
    if not isinstance(d, dict):
        raise GeometryFileError("top level must be an object", path, 1)
    base = Path(path).parent if path != "<string>" else Path(".")
    kind = doc.get(d, "scenario", str)
    p = doc.number(d, "smoothness", DEFAULT_SMOOTHNESS)
    common = dict(
        friction=doc.number(d, "friction", 0.5),
        k0=doc.number(d, "k0", 1e4), k1=doc.number(d, "k1", 1e6), eps=doc.number(d, "eps", 1e-8),
        path=path,
    )
    noise = doc.get(d, "noise", dict, {})
    common["noise_sigma"] = doc.number(noise, "sigma", 0.0)
    cov = doc.get(noise, "covariance", default=1.0)
    common["covariance"] = np.asarray(cov, dtype=float) if isinstance(cov, list) else float(cov)
    truth = doc.get(d, "truth", dict, {})
    common["truth"] = {
        "xi": doc.vector(truth, "xi", default=None),
        "seed": int(doc.number(truth, "seed", 0)),
    }
    par = doc.get(d, "parametrization", dict, {})
    ptype = doc.get(par, "type", str, "grasp" if kind == "peg" else "direction")
    if common["friction"] <= 0:
        raise doc.error("friction must be positive", "friction")

    if kind == "peg":
        bodies = doc.get(d, "bodies", dict)
        grasp = doc.pose(doc.get(bodies, "peg", dict), "grasp")
        hole_pose = doc.pose(doc.get(bodies, "hole", dict), "pose", default=None)
        dec = doc.get(d, "decomposition", dict)
        peg = [_piece(doc, it, base, p) for it in doc.get(dec, "peg", list)]
        hole = [_piece(doc, it, base, p) for it in doc.get(dec, "hole", list)]
        scene = DecompositionScene(peg, hole, str(d.get("name", "scene")))
        sensor_d = doc.get(d, "sensor", dict, {"type": "wrench"})
        if doc.get(sensor_d, "type", str, "wrench") != "wrench":
            raise doc.error("peg scenarios need a 'wrench' sensor", "sensor")
        sensor = WrenchSensor(doc.pose(sensor_d, "mount", default=None))
        if ptype == "grasp":
            kw = {k: doc.vector(par, k, 3) for k in ("lower", "upper") if k in par}
            param = GraspParametrization(grasp, hole_pose, **kw)
        elif ptype == "hole_offset":
            kw = {k: doc.vector(par, k, 2) for k in ("lower", "upper") if k in par}
            param = HoleOffsetParametrization(grasp, hole_pose, **kw)
        else:
            raise doc.error(f"unknown parametrization type '{ptype}'", "type")
        if np.any(param.lower > param.upper):
            raise doc.error("parametrization bounds need lower <= upper", "lower")
        scripts = []
        for ep in doc.get(d, "episodes", list):
            scripts.append(EpisodeScript(doc.pose(ep, "gripper"), doc.vector(ep, "approach", 3, [0.0, 0.0, -1.0])))
        if not scripts:
            raise doc.error("need at least one episode", "episodes")
        return Scenario("peg", param, scripts, sensor=sensor, scene=scene, **common)

    if kind == "localization":
        ch = doc.get(d, "chain", dict)
        joints = []
        for j in doc.get(ch, "joints", list):
            try:
                joints.append(Joint(doc.vector(j, "axis", 3), doc.pose(j, "origin", default=None)))
            except InvalidArgumentError as exc:
                if isinstance(exc, GeometryFileError):
                    raise
                raise doc.error(str(exc), "axis") from None
        links = [[_piece(doc, it, base, p) for it in link] for link in doc.get(ch, "links", list)]
        try:
            chain = SerialChain(joints, links, doc.pose(ch, "base", default=None), str(d.get("name", "chain")))
        except InvalidArgumentError as exc:
            raise doc.error(str(exc), "links") from None
        q = doc.vector(d, "q", chain.n_joints)
        link = int(doc.number(d, "link"))
        sensor_d = doc.get(d, "sensor", dict, {"type": "joint_torque"})
        if doc.get(sensor_d, "type", str, "joint_torque") != "joint_torque":
            raise doc.error("localization needs a 'joint_torque' sensor", "sensor")
        kw = {k: doc.vector(par, k, 3) for k in ("lower", "upper") if k in par}
        try:
            param = LocalizationParametrization(chain, q, link, **kw)
        except InvalidArgumentError as exc:
            raise doc.error(str(exc), "link") from None
        return Scenario("localization", param, [], chain=chain, **common)

    raise doc.error(f"unknown scenario type '{kind}'", "scenario")


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise GeometryFileError(f"cannot read file: {exc.strerror}", str(path)) from exc
    return parse_scenario(text, str(path))


def parse_measurements(text: str, path: str = "<string>") -> list[dict]:
    """Per-episode ``{"gamma": array, "gripper": Pose | None}`` entries."""
    doc = _Doc(text, path)
    if not isinstance(doc.data, list) or not doc.data:
        raise GeometryFileError("measurement file must be a non-empty JSON array", path, 1)
    out = []
    lines = text.splitlines()
    for e, item in enumerate(doc.data):
        if isinstance(item, dict):
            gamma = doc.vector(item, "gamma")
            grip = doc.pose(item, "gripper", default=None) if "gripper" in item else None
        else:
            try:
                gamma = np.asarray(item, dtype=float)
            except (TypeError, ValueError):
                gamma = None
            if gamma is None or gamma.ndim != 1 or not np.all(np.isfinite(gamma)):
                line = _episode_line(lines, e)
                raise GeometryFileError(f"episode {e}: gamma must be a finite numeric vector", path, line)
            grip = None
        out.append({"gamma": gamma, "gripper": grip})
    return out


def _episode_line(lines, index):
    """Best-effort line of the ``index``-th top-level array entry."""
    depth, count = 0, -1
    for lineno, line in enumerate(lines, start=1):
        for ch in line:
            if ch == "[":
                depth += 1
                if depth == 2:
                    count += 1
                    if count == index:
                        return lineno
            elif ch == "]":
                depth -= 1
    return None


def load_measurements(path) -> list[dict]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise GeometryFileError(f"cannot read file: {exc.strerror}", str(path)) from exc
    return parse_measurements(text, str(path))


def dump_measurements(episodes) -> str:
    """Measurement JSON with full precision (one object per episode)."""
    items = []
    for ep in episodes:
        item = {"gamma": [float(v) for v in ep["gamma"]]}
        if ep.get("gripper") is not None:
            item["gripper"] = ep["gripper"].to_dict()
        items.append(item)
    return json.dumps(items, indent=1)


# ------------------------------------------------------------ serialization

def _piece_dict(att: Attachment) -> dict:
    return {"geometry": {"vertices": att.shape.vertices.tolist(), "name": att.shape.name},
            "pose": att.pose.to_dict()}


def peg_config(scene: DecompositionScene, param, scripts, sensor: WrenchSensor | None = None,
               friction: float = 0.5, truth_xi=None, truth_seed: int = 0, noise_sigma: float = 0.0) -> dict:
    """Scenario dictionary reproducing an in-memory peg setup."""
    ptype = "grasp" if isinstance(param, GraspParametrization) else "hole_offset"
    grasp = param.nominal
    smooth = scene.peg[0].shape.smoothness
    return {
        "scenario": "peg",
        "name": scene.name,
        "smoothness": smooth,
        "bodies": {"peg": {"grasp": grasp.to_dict()}, "hole": {"pose": param.hole_pose.to_dict()}},
        "decomposition": {"peg": [_piece_dict(a) for a in scene.peg],
                          "hole": [_piece_dict(a) for a in scene.hole]},
        "sensor": {"type": "wrench", "mount": (sensor or WrenchSensor()).mount.to_dict()},
        "parametrization": {"type": ptype, "lower": param.lower.tolist(), "upper": param.upper.tolist()},
        "episodes": [{"gripper": s.start.to_dict(), "approach": [float(v) for v in s.approach]}
                     for s in scripts],
        "friction": friction,
        "noise": {"sigma": noise_sigma},
        "truth": {"xi": None if truth_xi is None else [float(v) for v in truth_xi], "seed": truth_seed},
    }


def chain_config(chain: SerialChain, q, link: int, friction: float = 0.5, lower=None, upper=None,
                 truth_xi=None, truth_seed: int = 0) -> dict:
    par = {"type": "direction"}
    if lower is not None:
        par["lower"], par["upper"] = list(map(float, lower)), list(map(float, upper))
    smooth = next(a.shape.smoothness for l in chain.links for a in l)
    return {
        "scenario": "localization",
        "name": chain.name,
        "smoothness": smooth,
        "chain": {
            "base": chain.base.to_dict(),
            "joints": [{"axis": j.axis.tolist(), "origin": j.origin.to_dict()} for j in chain.joints],
            "links": [[_piece_dict(a) for a in link_] for link_ in chain.links],
        },
        "q": [float(v) for v in q],
        "link": int(link),
        "sensor": {"type": "joint_torque"},
        "parametrization": par,
        "friction": friction,
        "truth": {"xi": None if truth_xi is None else [float(v) for v in truth_xi], "seed": truth_seed},
    }
