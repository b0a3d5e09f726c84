import json

import numpy as np
import pytest
from click.testing import CliRunner

from magkam import __version__, cli
from magkam.config import ConfigError, ExperimentConfig, header, read_output

KINETIC = {"model": {"a": [], "b": []}, "classes": [[0, 0], [1, 0], [0, 1], [1, 1]],
           "grid": {"n": 16, "h": 0.1, "v_cap": 3.0, "max_steps": 2}}

TWIN = {"model": {"a": [], "b": [[1, 0, 0.0, 0.5]]}, "classes": [[0, 0]],
        "grid": {"n": 16, "h": 0.1, "v_cap": 2.0, "max_steps": 3},
        "continuity": {"indices": [4, 8, 16]}}


def write_config(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return p


def run(args, env=None):
    return CliRunner().invoke(cli.main, args, env=env, catch_exceptions=False)


def csv_rows(path):
    _, body = read_output(path)
    lines = body.strip().splitlines()
    keys = lines[0].split(",")
    return [dict(zip(keys, ln.split(","))) for ln in lines[1:]]


def test_version():
    res = run(["--version"])
    assert res.exit_code == 0 and __version__ in res.output


def test_dry_run_writes_nothing(tmp_path):
    cfg = write_config(tmp_path, KINETIC)
    out = tmp_path / "out"
    res = run(["alpha", "--config", str(cfg), "--out", str(out), "--dry-run"])
    assert res.exit_code == 0 and not out.exists()
    m = json.loads(res.output)
    assert m["dry_run"] and m["command"] == "alpha"
    assert m["config_hash"] == ExperimentConfig.load(cfg).hash


def test_alpha_kinetic(tmp_path):
    cfg = write_config(tmp_path, KINETIC)
    out = tmp_path / "out"
    res = run(["alpha", "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 0, res.output
    first, _ = read_output(out / "alpha_scan.csv")
    assert first == header(ExperimentConfig.load(cfg))
    for r in csv_rows(out / "alpha_scan.csv"):
        c = np.array([float(r["c1"]), float(r["c2"])])
        assert abs(float(r["alpha_cycle"]) - 0.5 * c @ c) < 0.05
        assert abs(float(r["alpha_cycle"]) - float(r["alpha_lp"])) < 1e-7
    manifest = json.loads((out / "manifest_alpha.json").read_text())
    assert sorted(manifest["outputs"]) == ["alpha_scan.csv", "alpha_summary.json"]


def test_outputs_deterministic(tmp_path):
    cfg = write_config(tmp_path, TWIN)
    bodies = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        for cmd in ("sets", "continuity"):
            assert run([cmd, "--config", str(cfg), "--out", str(out)]).exit_code == 0
        bodies.append({p.name: p.read_bytes() for p in sorted(out.iterdir())
                       if not p.name.startswith("manifest_")})
    assert bodies[0] == bodies[1]
    assert {"sets_0.csv", "potential_0.csv", "sets_summary.csv", "continuity.csv"} <= set(bodies[0])


def test_continuity_bounds(tmp_path):
    cfg = write_config(tmp_path, TWIN)
    out = tmp_path / "out"
    assert run(["continuity", "--config", str(cfg), "--out", str(out)]).exit_code == 0
    rows = csv_rows(out / "continuity.csv")
    assert [r["n"] for r in rows] == ["4", "8", "16"]
    assert all(r["bound_satisfied"] == "true" for r in rows)


def test_env_override(tmp_path):
    cfg = write_config(tmp_path, TWIN)
    env_out = tmp_path / "from_env"
    res = run(["sets", "--config", str(cfg)], env={"MAGKAM_OUT": str(env_out)})
    assert res.exit_code == 0 and (env_out / "sets_summary.csv").exists()
    # the command line wins over the environment
    flag_out = tmp_path / "from_flag"
    res = run(["sets", "--config", str(cfg), "--out", str(flag_out)],
              env={"MAGKAM_OUT": str(env_out / "unused")})
    assert res.exit_code == 0 and (flag_out / "sets_summary.csv").exists()
    assert not (env_out / "unused").exists()
    # headers do not depend on where the files went
    assert read_output(env_out / "sets_0.csv")[0] == read_output(flag_out / "sets_0.csv")[0]


@pytest.mark.parametrize("payload", [
    "{not json",
    json.dumps({"classes": [[0, 0]], "grid": {"n": 4}}),
    json.dumps({"classes": [[0, 0]], "bogus": 1}),
    json.dumps({"model": {"a": [[1, 0, "x", 0]]}}),
])
def test_config_errors_exit_2(tmp_path, payload):
    p = tmp_path / "bad.json"
    p.write_text(payload)
    res = CliRunner().invoke(cli.main, ["alpha", "--config", str(p), "--out", str(tmp_path)])
    assert res.exit_code == 2
    assert "config error" in res.output


def test_missing_config_exit_2(tmp_path):
    res = CliRunner().invoke(cli.main, ["sets", "--config", str(tmp_path / "nope.json")])
    assert res.exit_code == 2


def test_graph_error_exit_2(tmp_path):
    # v_cap * h >= 1/2 is rejected by the graph builder
    d = dict(KINETIC, grid={"n": 16, "h": 0.1, "v_cap": 6.0, "max_steps": 1})
    res = CliRunner().invoke(cli.main, ["alpha", "--config", str(write_config(tmp_path, d)),
                                        "--out", str(tmp_path / "o")])
    assert res.exit_code == 2


def test_numerical_failure_exit_3(tmp_path, monkeypatch):
    def boom(cfg, timer, echo):
        raise FloatingPointError("overflow in kernel")
    monkeypatch.setitem(cli.PIPELINES, "sets", boom)
    res = CliRunner().invoke(cli.main, ["sets", "--config", str(write_config(tmp_path, TWIN)),
                                        "--out", str(tmp_path / "o")])
    assert res.exit_code == 3
    assert "FloatingPointError" in res.output


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig.from_dict(json.loads(json.dumps(TWIN)))
    again = ExperimentConfig.from_dict(json.loads(cfg.dumps()))
    assert again == cfg and again.hash == cfg.hash
    moved = ExperimentConfig.from_dict(dict(TWIN, out="elsewhere"))
    assert moved.hash == cfg.hash
    changed = ExperimentConfig.from_dict(dict(TWIN, seed=1))
    assert changed.hash != cfg.hash


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"perturbation": {"profile": "cubic"}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"tolerances": {"alpha": 0}})
