import csv
import json
import shutil

import pytest

from multigood_cse.cli import EXIT_INPUT, EXIT_OK, EXIT_VERIFY, main


@pytest.fixture
def tiny_cfg(configs_dir, tmp_path):
    path = tmp_path / "tiny.json"
    shutil.copy(configs_dir / "tiny.json", path)
    return path


@pytest.fixture
def solved(tiny_cfg, tmp_path):
    out = tmp_path / "eq"
    assert main(["solve", "--config", str(tiny_cfg), "--out", str(out)]) == EXIT_OK
    return tiny_cfg, out


def test_solve_writes_outputs(capsys, solved):
    _, out = solved
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == "solve"
    for name in manifest["files"]:
        assert (out / name).is_file()
    assert {"equilibrium.json", "policy.csv", "distribution.csv"} <= set(manifest["files"])
    assert "r = " in capsys.readouterr().out


def test_invalid_config_exit_code(configs_dir, tmp_path, capsys):
    doc = json.loads((configs_dir / "tiny.json").read_text())
    doc["utility"]["gamma"] = 1.0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert main(["solve", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_INPUT
    err = capsys.readouterr().err
    assert "gamma" in err
    assert main(["solve", "--config", str(tmp_path / "nope.json")]) == EXIT_INPUT


def test_malformed_json(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["solve", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_INPUT


def test_verify_round_trip(solved, capsys):
    cfg, out = solved
    assert main(["verify", "--config", str(cfg), "--equilibrium", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert text.count("PASS") == 4


def test_verify_tampered_rate(solved, capsys):
    cfg, out = solved
    path = out / "equilibrium.json"
    doc = json.loads(path.read_text())
    doc["prices_normalized"]["r"] += 0.01
    path.write_text(json.dumps(doc))
    assert main(["verify", "--config", str(cfg), "--equilibrium", str(out)]) == EXIT_VERIFY
    assert "condition_failed" in capsys.readouterr().err


def test_verify_missing_output(solved, capsys):
    cfg, out = solved
    (out / "policy.csv").unlink()
    assert main(["verify", "--config", str(cfg), "--equilibrium", str(out)]) == EXIT_INPUT
    assert "policy.csv" in capsys.readouterr().err


def test_verify_config_hash_mismatch(solved, capsys):
    cfg, out = solved
    cfg.write_text(cfg.read_text() + "\n")
    assert main(["verify", "--config", str(cfg), "--equilibrium", str(out)]) == EXIT_INPUT
    assert "config_hash_mismatch" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_compare_rejects_bad_spread(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "cmp"
    code = main(["compare", "--config", str(tiny_cfg), "--out", str(out),
                 "--spreads", "0,0.1,1.5"])
    assert code == EXIT_OK
    assert "spread_rejected" in capsys.readouterr().err
    with open(out / "spreads.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["s"] for r in rows] == ["0.0", "0.1", "1.5"]
    assert rows[2]["error"] and not rows[2]["r_star"]
    assert rows[1]["icx_holds"] == "True"
    assert float(rows[1]["r_star"]) < float(rows[0]["r_star"])


def test_check_is_deterministic(tiny_cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["check", "--config", str(tiny_cfg), "--out", str(out), "--samples", "2",
                     "--seed", "4"]) == EXIT_OK
    assert (a / "check.json").read_bytes() == (b / "check.json").read_bytes()


def test_check_reads_environment(tiny_cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("CSE_CONFIG", str(tiny_cfg))
    monkeypatch.setenv("CSE_SAMPLES", "1")
    out = tmp_path / "env"
    assert main(["check", "--out", str(out)]) == EXIT_OK
    doc = json.loads((out / "check.json").read_text())
    assert len(doc["samples"]) == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["options"]["samples"] == 1
    # flags win over the environment
    assert main(["check", "--out", str(out), "--samples", "2"]) == EXIT_OK
    assert len(json.loads((out / "check.json").read_text())["samples"]) == 2


def test_bad_environment_value(tiny_cfg, monkeypatch):
    monkeypatch.setenv("CSE_SAMPLES", "many")
    assert main(["check", "--config", str(tiny_cfg)]) == EXIT_INPUT


def test_oracle_small_lattice(tiny_cfg, tmp_path):
    out = tmp_path / "orc"
    assert main(["oracle", "--config", str(tiny_cfg), "--out", str(out),
                 "--lattice", "5"]) == EXIT_OK
    doc = json.loads((out / "oracle.json").read_text())
    assert doc["ratio_range"] == [0.5, 2.0]
    assert (out / "oracle_field.csv").is_file()


def test_oracle_rejects_three_goods(configs_dir, tmp_path):
    code = main(["oracle", "--config", str(configs_dir / "three_goods.json"),
                 "--out", str(tmp_path / "o"), "--lattice", "3"])
    assert code == EXIT_INPUT


def test_missing_subcommand():
    with pytest.raises(SystemExit):
        main([])
