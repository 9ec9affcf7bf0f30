import csv
import json

import numpy as np
import pytest

from vplap.cli import EXIT_CERTIFICATE, EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, main
from vplap.config import ConfigError, parse_config
from vplap.report import atomic_write, write_csv, write_json


def write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


MINIMAL = "[problem]\ndomain = disk\np = 2\n"


def test_describe_radial(configs_dir, capsys):
    assert main(["describe", str(configs_dir / "radial_p2.cfg")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "eps schedule: 1, 0.25, 0.0625" in out and "1e-08" in out
    assert "admissible sigma < 1" in out


def test_describe_gamma_warning(tmp_path, capsys):
    cfg = write(tmp_path, "[problem]\ndomain = ball\nn = 3\np = 3\n[diagnostic d]\nop = weighted_d2\ngamma = 1\n")
    assert main(["describe", cfg]) == EXIT_OK
    assert "WARNING (gamma < n-2 required)" in capsys.readouterr().out


def test_describe_no_positive_sigma(tmp_path, capsys):
    cfg = write(tmp_path, "[problem]\ndomain = disk\np = 1.4\n[diagnostic s]\nop = inverse_gradient\nsigma = -0.2\n")
    assert main(["describe", cfg]) == EXIT_OK
    assert "no admissible positive sigma" in capsys.readouterr().out


@pytest.mark.parametrize("text,key", [
    ("[problem]\ndomain = disk\np = 0.5\n", "problem.p"),
    (MINIMAL + "colour = red\n", "problem.colour"),
    (MINIMAL + "[extras]\na = 1\n", "extras"),
    (MINIMAL + "f = 1 + y\n", "problem.f"),
    (MINIMAL + "[solver]\neps_factor = 2\n", "solver"),
    (MINIMAL + "[diagnostic a]\nop = magic\n", "diagnostic a.op"),
    (MINIMAL + "[diagnostic a]\nop = weighted_d2\nbeta = 1\n", "diagnostic a.beta"),
    (MINIMAL + "[run]\nresolutions = 33,17\n", "run.resolutions"),
    (MINIMAL + "[run]\noracle = radial\n[problem2]\n", "problem2"),
    ("[problem]\ndomain = disk\np = 2\nf = x1\n[run]\noracle = radial\n", "run.oracle"),
    ("[problem]\ndomain = square\np = 2\n", "problem.domain"),
    ("[problem]\ndomain = expression\np = 2\nlower = -1,-1\nupper = 1,1\n", "problem.level"),
])
def test_config_errors_name_key(tmp_path, capsys, text, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == key
    assert main(["run", write(tmp_path, text)]) == EXIT_CONFIG
    assert f"[{key}]" in capsys.readouterr().err


def test_p_message_cites_requirement(tmp_path, capsys):
    assert main(["run", write(tmp_path, "[problem]\ndomain = disk\np = 0.5\n")]) == EXIT_CONFIG
    assert "requires p > 1" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert main(["run", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG


def test_expression_domain(tmp_path):
    cfg = parse_config("[problem]\ndomain = expression\np = 2\nlower = -1,-1\nupper = 1,1\n"
                       "level = x1^2/0.8 + x2^2/0.5 - 1\nsymmetric = true\n")
    assert cfg.problem.domain.symmetric_x1
    assert cfg.problem.domain.level(np.zeros((2, 1)))[0] == -1.0


def test_run_radial(configs_dir, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["--out", str(out), "run", str(configs_dir / "radial_p2.cfg")]) == EXIT_OK
    rep = json.loads((out / "solver_r65.json").read_text())
    assert rep["oracle_max_error"] <= 5e-2 and rep["converged"] and rep["eps_floor"] == 1e-8
    assert rep["boundary_treatment"] == "first-order"
    summary = list(csv.DictReader(open(out / "summary.csv", newline="")))
    assert summary[0]["certificate"] == "radial_oracle" and summary[0]["status"] == "pass"
    assert (out / "figures" / "ladder_oracle_max_error.png").stat().st_size > 0
    assert "PASS" in capsys.readouterr().out


def test_run_symmetry(configs_dir, tmp_path):
    out = tmp_path / "s"
    assert main(["--quiet", "--out", str(out), "run", str(configs_dir / "symmetry_p3_disk.cfg")]) == EXIT_OK
    for res in (33, 65, 129):
        mp = json.loads((out / f"moving_plane_r{res}.json").read_text())
        assert mp["symmetry_defect"] <= mp["h"] and abs(mp["lambda_bar"]) <= mp["step"]
        assert mp["thin_cap"]["passed"]
    hyp = json.loads((out / "hypotheses.json").read_text())
    assert hyp["x1_monotone"]["status"] == "pass"


def test_certificate_failure_exit_3(tmp_path):
    cfg = write(tmp_path, MINIMAL + "[diagnostic d]\nop = weighted_d2\nexpect = growing\n"
                                    "[run]\nresolutions = 17,33,65\n")
    out = tmp_path / "o"
    assert main(["--quiet", "--out", str(out), "run", cfg]) == EXIT_CERTIFICATE
    assert (out / "diagnostics.json").exists() and (out / "summary.csv").exists()
    rows = list(csv.DictReader(open(out / "summary.csv", newline="")))
    assert rows[0]["status"] == "fail"


def test_divergence_exit_2(tmp_path):
    cfg = write(tmp_path, "[problem]\ndomain = disk\np = 2\nf = 1 + 12*u1\n"
                          "[solver]\npicard_max = 20\n[run]\nresolutions = 17\n")
    out = tmp_path / "o"
    assert main(["--quiet", "--out", str(out), "run", cfg]) == EXIT_DIVERGED
    rep = json.loads((out / "solver_r17.json").read_text())
    assert not rep["converged"] and rep["picard_increments"]


def test_env_var_and_overrides(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("VPLAP_OUT", str(tmp_path / "env"))
    cfg = write(tmp_path, MINIMAL)
    assert main(["--quiet", "--resolutions", "9,17", "--seed", "5", "run", cfg]) == EXIT_OK
    assert capsys.readouterr().out == ""
    out = tmp_path / "env"
    assert sorted(p.name for p in out.glob("solver_r*.json")) == ["solver_r17.json", "solver_r9.json"]
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["resolutions"] == [9, 17]
    assert main(["--resolutions", "17,9", "run", cfg]) == EXIT_CONFIG


def test_reports_embed_hash_and_floor(configs_dir, tmp_path):
    out = tmp_path / "r"
    main(["--quiet", "--out", str(out), "--resolutions", "17,33", "run", str(configs_dir / "symmetry_p3_disk.cfg")])
    hashes = {json.loads(p.read_text())["config_hash"] for p in out.glob("*.json")}
    assert len(hashes) == 1
    assert json.loads((out / "diagnostics.json").read_text())["eps_floor"] == 1e-8
    assert not list(out.glob(".*.tmp"))


def test_seed_changes_hash(configs_dir):
    text = (configs_dir / "symmetry_p3_disk.cfg").read_text()
    assert parse_config(text, {"seed": 1}).digest != parse_config(text, {"seed": 2}).digest


def test_csv_and_json_format(tmp_path):
    write_csv(tmp_path / "a.csv", ["x", "y"], [[1, 0.1], [2, float("inf")]])
    raw = (tmp_path / "a.csv").read_bytes()
    assert raw == b"x,y\n1,0.1\n2,inf\n"
    write_json(tmp_path / "b.json", {"b": float("nan"), "a": [1.5]})
    assert json.loads((tmp_path / "b.json").read_text()) == {"a": [1.5], "b": "nan"}
    atomic_write(tmp_path / "c" / "d.txt", b"ok")
    assert (tmp_path / "c" / "d.txt").read_bytes() == b"ok"


def test_all_bundled_configs_parse(configs_dir):
    for path in sorted(configs_dir.glob("*.cfg")):
        cfg = parse_config(path.read_text())
        assert cfg.resolutions
