"""Unit tests for the command line harness."""

import json
import os

import pytest

from ym2 import cli


def test_parse_config_key_value(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text("n = 2000\ngroups = su2  # comment\nsigma = 3.0\n\n")
    cfg = cli.parse_config(str(p))
    assert cfg == {"n": 2000, "groups": "su2", "sigma": 3.0}


def test_parse_config_json(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"n": 500, "groups": "u1"}))
    assert cli.parse_config(str(p)) == {"n": 500, "groups": "u1"}


def test_parse_config_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("this has no equals sign\n")
    with pytest.raises(cli.ConfigError):
        cli.parse_config(str(p))
    with pytest.raises(cli.ConfigError):
        cli.parse_config(str(tmp_path / "missing.txt"))
    p2 = tmp_path / "bad.json"
    p2.write_text("{broken json")
    with pytest.raises(cli.ConfigError):
        cli.parse_config(str(p2))


def test_config_validation():
    with pytest.raises(cli.ConfigError):
        cli.run("no-such-command", {})
    with pytest.raises(cli.ConfigError):
        cli.run("girsanov-check", {"bogus_key": 1})
    with pytest.raises(cli.ConfigError):
        cli.run("girsanov-check", {"n": 10})
    with pytest.raises(cli.ConfigError):
        cli.run("girsanov-check", {"groups": "so5"})


def test_geometry_errors_become_config_errors():
    with pytest.raises(cli.ConfigError):
        cli.run("mm-check", {"n": 200, "eps_list": "0.013"})


def test_run_writes_outputs(tmp_path):
    out = str(tmp_path / "res")
    manifest = cli.run("girsanov-check", {"n": 2000, "groups": "u1"},
                       outdir=out)
    assert manifest["pass"] and manifest["exit_status"] == 0
    assert os.path.exists(os.path.join(out, "girsanov-check.jsonl"))
    assert os.path.exists(os.path.join(out, "results.csv"))
    assert os.path.exists(os.path.join(out, "girsanov-check.manifest.json"))
    assert os.path.exists(os.path.join(out, "figures", "girsanov-check.png"))
    with open(os.path.join(out, "girsanov-check.jsonl")) as fh:
        lines = [json.loads(line) for line in fh]
    assert all({"experiment", "check", "group", "lhs", "rhs", "z", "pass",
                "n", "seed", "wall_time"} <= set(r) for r in lines)


def test_rerun_is_byte_identical_modulo_walltime(tmp_path):
    cfg = {"n": 2000, "groups": "u1", "seed": 99}
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    cli.run("girsanov-check", cfg, outdir=out1, figures=False)
    cli.run("girsanov-check", cfg, outdir=out2, figures=False)
    a = cli.canonical_record_lines(os.path.join(out1, "girsanov-check.jsonl"))
    b = cli.canonical_record_lines(os.path.join(out2, "girsanov-check.jsonl"))
    assert a == b


def test_main_exit_codes(tmp_path):
    rc = cli.main(["girsanov-check", "--samples", "2000", "--group", "u1",
                   "--out", str(tmp_path / "r"), "--no-figures"])
    assert rc == 0
    assert cli.main(["definitely-not-a-command"]) == 2
    assert cli.main(["girsanov-check", "--samples", "5"]) == 2
    assert cli.main(["print-config"]) == 0


def test_sweep_validation_and_fit(tmp_path):
    with pytest.raises(cli.ConfigError):
        cli.sweep("girsanov-check", {"n": 500}, "n", [1000, 1000, 1000],
                  metric="linear-vs-analytic")
    with pytest.raises(cli.ConfigError):
        cli.sweep("girsanov-check", {"n": 500}, "n", [1000, 2000],
                  metric="linear-vs-analytic")
    manifest = cli.sweep(
        "smooth-lab", {"groups": "u1", "steps": 150}, "steps",
        [100, 200, 400], metric="connection-comparison",
        outdir=str(tmp_path / "s"), figures=False)
    assert manifest["slope"] < -2.0  # RK4: the residual falls fast in steps
    assert len(manifest["gaps"]) == 3


def test_mm_check_smoke_loose_threshold(tmp_path):
    out = str(tmp_path / "mm")
    manifest = cli.run("mm-check", {"n": 100, "sigma": 50.0, "groups": "u1",
                                    "q_widths": "0.2", "eps_list": "0.2"},
                       outdir=out, figures=False)
    assert manifest["pass"]
    assert os.path.exists(os.path.join(out, "mm-check.manifest.json"))


def test_sweep_unknown_metric():
    with pytest.raises(cli.ConfigError):
        cli.sweep("girsanov-check", {"n": 500, "groups": "u1"}, "n",
                  [500, 1000, 2000], metric="nope")
