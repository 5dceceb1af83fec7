import json

import numpy as np
import pytest

from contact_est import audit, cli
from cli_utils import output_differences
from oracles import random_stack


def run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = cli.main([*argv, "--out", str(out), "--quiet"])
    return code, out


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_feature_writes_features_and_manifest(tmp_path):
    code, out = run(tmp_path, "feature", "--geom-a", "cube", "--geom-b", "cube", "--pose-b", "3,0,0")
    assert code == 0
    f = json.loads((out / "features.json").read_text())
    assert f["features"]["sigma"] == pytest.approx(3 / (2 * 4 ** (1 / 20)), abs=1e-9)
    assert np.asarray(f["derivatives"]["dnormal"]).shape == (3, 12)
    m = manifest(out)
    assert m["command"] == "feature" and m["exit_code"] == 0 and m["seed"] == 0
    for key in ("argv", "config_paths", "options", "outputs", "tool_version", "backend", "python", "threads",
                "statistics", "wall_time"):
        assert key in m


def test_no_derivatives_flag(tmp_path):
    code, out = run(tmp_path, "feature", "--geom-a", "apple", "--geom-b", "sponge", "--pose-b", "0.12,0,0",
                    "--no-derivatives")
    assert code == 0
    assert "derivatives" not in json.loads((out / "features.json").read_text())


def test_global_flags_before_subcommand(tmp_path):
    out = tmp_path / "o"
    code = cli.main(["--seed", "4", "--out", str(out), "--quiet", "synthesize"])
    assert code == 0 and manifest(out)["seed"] == 4


def test_malformed_geometry_exits_2_with_line(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"vertices": [[0, 0, 0],\n  [1, 0, "x"]]}')
    code, _ = run(tmp_path, "feature", "--geom-a", str(bad), "--geom-b", "cube", "--pose-b", "3,0,0")
    assert code == 2
    assert f"{bad}:2" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["feature", "--geom-a", "cube"],
    ["feature", "--geom-a", "cube", "--geom-b", "nosuch", "--pose-b", "3,0,0"],
    ["feature", "--geom-a", "cube", "--geom-b", "cube", "--pose-b", "3,0"],
    ["estimate", "--config", "three_link"],
    ["gradcheck", "--only", "nosuch"],
    ["solve-forces", "--stack", "missing.json"],
    ["bogus"],
])
def test_input_errors_exit_2(tmp_path, argv):
    assert run(tmp_path, *argv)[0] == 2


def test_nonconvergence_exits_3_with_best_iterate(tmp_path):
    code, out = run(tmp_path, "feature", "--geom-a", "mustard", "--geom-b", "sponge", "--pose-b", "0.1,0.05,0.02,1,0,0",
                    "--max-iterations", "1", "--tolerance", "1e-15")
    assert code == 3
    f = json.loads((out / "features.json").read_text())
    assert f["converged"] is False and f["features"]["residual"] > 0
    assert manifest(out)["exit_code"] == 3


def test_degenerate_query_exits_4(tmp_path):
    assert run(tmp_path, "feature", "--geom-a", "cube", "--geom-b", "cube", "--pose-b", "0,0,0")[0] == 4


def test_failed_audit_exits_5(tmp_path, monkeypatch):
    fn, n, _, frac = audit.AUDITS["point_jacobian"]
    monkeypatch.setitem(audit.AUDITS, "point_jacobian", (fn, n, 0.0, frac))
    code, out = run(tmp_path, "gradcheck", "--only", "point_jacobian", "--scale", "0.1")
    assert code == 5
    assert manifest(out)["statistics"]["failed"] == ["point_jacobian"]


def test_unexpected_error_exits_1(tmp_path, monkeypatch):
    def boom(run):
        raise RuntimeError("boom")

    monkeypatch.setattr(cli, "cmd_synthesize", boom)
    assert run(tmp_path, "synthesize")[0] == 1


def test_benchmark_single_query(tmp_path):
    code, out = run(tmp_path, "benchmark", "--queries", "1")
    assert code == 0
    lines = (out / "benchmark.csv").read_text().strip().splitlines()
    assert lines[0] == "pair,max_iterations,n_queries,converged_fraction,mean_iterations,AT_us,MLR"
    assert len(lines) == 2 and lines[1].split(",")[2] == "1"


def test_solve_forces_with_sensitivity(tmp_path, rng):
    st = random_stack(rng, m=2)
    data = st.to_dict()
    data["dP"] = rng.normal(size=(1,) + st.P.shape).tolist()
    data["dgaps"] = rng.normal(size=(2, 1)).tolist()
    path = tmp_path / "stack.json"
    path.write_text(json.dumps(data))
    code, out = run(tmp_path, "solve-forces", "--stack", str(path))
    assert code == 0
    res = json.loads((out / "forces.json").read_text())
    assert res["kkt"]["stationarity"] <= 1e-8 * (1 + np.linalg.norm(st.gamma) * 10)
    assert np.asarray(res["sensitivity"]["dforces"]).shape == (6, 1)


def test_trace_outputs(tmp_path):
    code, out = run(tmp_path, "trace-degeneration", "--range", "0", "5", "--step", "1")
    assert code == 0
    lines = (out / "trace.csv").read_text().strip().splitlines()
    assert lines[0] == "angle_deg,wx,wy,wz,sigma,iters,residual" and len(lines) == 7


@pytest.mark.parametrize("argv", [
    ["feature", "--geom-a", "apple", "--geom-b", "mustard", "--pose-b", "0.1,0.02,0,0.3,0.2,0.1"],
    ["synthesize", "--config", "hole_offset", "--noise", "0.001", "--seed", "9"],
    ["trace-degeneration", "--range", "0", "3", "--step", "0.5"],
    ["benchmark", "--queries", "6", "--max-iterations", "5", "20", "--per-pair"],
    ["gradcheck", "--only", "support_gradient", "point_jacobian", "--scale", "0.1"],
])
def test_replay_reproduces_outputs(tmp_path, argv):
    code, out = run(tmp_path, *argv)
    assert code == 0
    assert cli.main(["replay", str(out / "manifest.json"), "--out", str(tmp_path / "again")]) == 0
    assert output_differences(out, tmp_path / "again") == []
    assert manifest(tmp_path / "again")["argv"][:len(argv)] == argv


def test_replay_default_out_and_bad_manifest(tmp_path):
    code, out = run(tmp_path, "synthesize")
    assert cli.main(["replay", str(out / "manifest.json")]) == 0
    assert (tmp_path / "out_replay" / "measurements.json").is_file()
    (tmp_path / "junk.json").write_text("{}")
    assert cli.main(["replay", str(tmp_path / "junk.json")]) == 2
