import json
import os
import subprocess
import sys

import pytest

from pdmpkit import cli


def only_run(outdir):
    (name,) = os.listdir(outdir)
    return os.path.join(outdir, name)


def test_resolve_precedence_and_defaults():
    cfg = cli.resolve("simulate", {"horizon": 5.0, "seed": 3}, {"seed": 4})
    assert cfg["horizon"] == 5.0 and cfg["seed"] == 4 and cfg["x0"] == [1.0, 1.0]
    cfg = cli.resolve("stability", {"model": "birth-death"})
    assert cfg["starts"] == [[0.5, 0.0], [5.0, 0.0]]
    assert cli.resolve("drift", {"model": "kato"})["lyapunov"] == "sum"


@pytest.mark.parametrize("cmd,file_cfg", [
    ("simulate", {"bogus": 1}),
    ("simulate", {"horizon": "long"}),
    ("simulate", {"seed": True}),
    ("simulate", {"model": "nope"}),
    ("simulate", {"params": {"kappa9": 1}}),
    ("simulate", {"command": "rank"}),
    ("nope", {}),
])
def test_resolve_rejects_bad_configs(cmd, file_cfg):
    with pytest.raises(cli.ConfigError):
        cli.resolve(cmd, file_cfg)


def test_run_id_ignores_outdir_and_round_trips(tmp_path):
    cfg = cli.resolve("rank", {"outdir": str(tmp_path / "a")})
    assert cli.run_id(cfg) == cli.run_id({**cfg, "outdir": "elsewhere"})
    assert cli.run_id(cfg) != cli.run_id({**cfg, "seed": 1})
    status, out = cli.run(cfg)
    assert status == 0
    saved = json.load(open(os.path.join(out, "config.json")))
    assert cli.run_id(cli.resolve("rank", saved)) == cli.run_id(cfg)


def test_config_file_and_flag_override(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"model": "pure-death", "N": 2000, "seed": 1}))
    out = tmp_path / "runs"
    assert cli.main(["estimate-chain", "--config", str(conf), "--seed", "2",
                     "--outdir", str(out)]) == 0
    run = only_run(out)
    cfg = json.load(open(os.path.join(run, "config.json")))
    assert cfg["seed"] == 2 and cfg["N"] == 2000
    manifest = json.load(open(os.path.join(run, "manifest.json")))
    assert "density.csv" in manifest["artifacts"]
    assert manifest["versions"]["backend"] in ("cython", "python")


def test_exit_code_config_errors(tmp_path):
    assert cli.main(["simulate", "--bogus", "1"]) == 2
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    assert cli.main(["simulate", "--config", str(bad)]) == 2
    assert cli.main(["simulate", "--params", '{"gamma1": 0.5}',
                     "--outdir", str(tmp_path)]) == 2
    assert cli.main(["nonsense"]) == 2


def test_exit_code_domain_error(tmp_path):
    assert cli.main(["simulate", "--x0", "[-1, 1]", "--outdir", str(tmp_path)]) == 3


def test_exit_code_explosion(tmp_path):
    assert cli.main(["stability", "--model", "kato", "--paths", "200", "--max-jumps", "2000",
                     "--times", "[3.0]", "--outdir", str(tmp_path)]) == 4


def test_list_models(capsys):
    assert cli.main(["list-models"]) == 0
    listing = json.loads(capsys.readouterr().out)
    assert "gene" in listing and "kappa1" in listing["gene"]


def test_rank_and_drift_results(tmp_path):
    assert cli.main(["rank", "--outdir", str(tmp_path / "r")]) == 0
    rank = json.load(open(os.path.join(only_run(tmp_path / "r"), "rank.json")))
    assert rank["verdict"] and rank["rank"] == 2
    assert cli.main(["drift", "--occupation-steps", "2000", "--outdir", str(tmp_path / "d")]) == 0
    res = json.load(open(os.path.join(only_run(tmp_path / "d"), "drift.json")))
    assert res["c1"] > 0 and res["occupation"]["passed"]


def test_simulate_artifacts(tmp_path):
    assert cli.main(["simulate", "--paths", "3", "--horizon", "5",
                     "--outdir", str(tmp_path)]) == 0
    run = only_run(tmp_path)
    assert sorted(os.listdir(run)) == ["config.json", "manifest.json", "summary.json",
                                       "trajectories.csv"]
    assert len(json.load(open(os.path.join(run, "summary.json")))) == 3


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "pdmpkit", "list-models"],
                         capture_output=True, text=True, check=True)
    assert "heavy-tail" in json.loads(res.stdout)
