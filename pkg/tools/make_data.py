"""Regenerate the JSON fixtures shipped under ``src/contact_est/data``."""

import json
from pathlib import Path

import numpy as np

from contact_est.geometry import save_geometry
from contact_est.pose import Pose
from contact_est.scenarios.chain import seven_joint_chain, three_link_chain
from contact_est.scenarios.config import chain_config, peg_config
from contact_est.scenarios.peg import (
    DEFAULT_GRASP, SCENES, EpisodeScript, GraspParametrization, HoleOffsetParametrization,
    default_scripts,
)
from contact_est.shapes import BENCHMARK_FIXTURES

DATA = Path(__file__).resolve().parents[1] / "src" / "contact_est" / "data"
I = [1.0, 0.0, 0.0, 0.0]


def write(path, obj):
    path.write_text(json.dumps(obj, indent=1) + "\n")


def main():
    geo = DATA / "geometries"
    for name, make in BENCHMARK_FIXTURES.items():
        save_geometry(make(), geo / f"{name}.json")

    sc = DATA / "scenarios"
    for name, make in SCENES.items():
        param = GraspParametrization(DEFAULT_GRASP, Pose.identity())
        write(sc / f"peg_{name}.json",
              peg_config(make(), param, default_scripts(name), truth_xi=[0.001, -0.002, 0.02], truth_seed=1))

    param = HoleOffsetParametrization(DEFAULT_GRASP, Pose.identity())
    scripts = [EpisodeScript(Pose([0.016, 0.002, 0.1], I), np.array([0.0, 0.0, -1.0])),
               EpisodeScript(Pose([0.001, 0.019, 0.1], I), np.array([0.0, 0.0, -1.0]))]
    write(sc / "hole_offset.json",
          peg_config(SCENES["rect"](), param, scripts, truth_xi=[0.002, -0.003], truth_seed=3))

    write(sc / "three_link.json", chain_config(three_link_chain(), [0.3, -0.4, 0.8, 0.5, -0.6, 0.7], 6,
                                                     truth_xi=[0.3, -0.8, 0.5], truth_seed=1))
    write(sc / "seven_joint.json",
          chain_config(seven_joint_chain(), [0.2, -0.5, 0.4, 0.9, -0.3, 0.6, 0.1], 7,
                       truth_xi=[0.6, 0.2, -0.7], truth_seed=2))


if __name__ == "__main__":
    main()
