import json
from pathlib import Path

import pytest

from festgroups import cli
from festgroups.config import ConfigError, load_config, parse_config, render_config

SMALL = """
[paths]
scan_log = data/log.csv
scanner_map = data/map.json
oui_table = data/oui.tsv
schedule = data/schedule.json
output = out

[ingest]
salt = test-salt

[irm]
sweeps = 20
restarts = 2

[micro]
trials = 3

[eval]
runs = 2

[synth]
participants = 60
concerts = 15
row_clusters = 3
col_clusters = 3
stages = 3
days = 2
group_devices = 40
groups = 6

[run]
seed = 5
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text(SMALL)
    return p


def run(*args):
    return cli.main([str(a) for a in args])


def test_defaults_and_relative_paths(cfg_path):
    cfg = load_config(cfg_path)
    assert cfg.path("scan_log") == cfg_path.parent / "data" / "log.csv"
    assert cfg.irm_config().alpha_row is None
    assert cfg.micro.trials == 3 and cfg.eval.top_k == 10


def test_all_errors_reported_at_once():
    text = SMALL.replace("sweeps = 20", "sweeps = -1").replace("runs = 2", "runs = many")
    text += "\n[bogus]\nx = 1\n"
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    joined = "\n".join(err.value.problems)
    assert "irm.sweeps" in joined and "eval.runs" in joined and "[bogus]" in joined


def test_missing_salt_rejected():
    with pytest.raises(ConfigError):
        parse_config(SMALL.replace("salt = test-salt", ""))


def test_hash_ignores_output_seed_and_jobs(tmp_path):
    a = parse_config(SMALL, tmp_path)
    b = parse_config(SMALL.replace("output = out", "output = elsewhere")
                     .replace("seed = 5", "seed = 6\njobs = 3"), tmp_path)
    c = parse_config(SMALL.replace("sweeps = 20", "sweeps = 21"), tmp_path)
    assert a.config_hash() == b.config_hash() != c.config_hash()


def test_render_round_trip(tmp_path):
    cfg = parse_config(SMALL, tmp_path)
    assert parse_config(render_config(cfg), tmp_path).as_dict() == cfg.as_dict()


def test_unknown_subcommand_is_usage_error(cfg_path, capsys):
    assert run("frobnicate", "--config", cfg_path) == cli.EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_bad_config_is_usage_error(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[irm]\nbeta = -1\n")
    assert run("irm", "--config", bad) == cli.EXIT_USAGE
    assert run("irm", "--config", tmp_path / "nope.ini") == cli.EXIT_USAGE


def test_missing_input_names_path(cfg_path, capsys):
    assert run("ingest", "--config", cfg_path) == cli.EXIT_INPUT
    assert "log.csv" in capsys.readouterr().err


@pytest.fixture
def chain(cfg_path, tmp_path):
    for stage in cli.STAGES:
        assert run(stage, "--config", cfg_path, "--jobs", 2) == 0, stage
    return tmp_path / "out"


def test_full_chain_stamps_every_artifact(chain):
    report = json.loads((chain / "report.json").read_text())
    assert report["seed"] == 5 and len(report["config_hash"]) == 16
    for name in cli.REPORT_PARTS:
        doc = json.loads((chain / name).read_text())
        assert doc["config_hash"] == report["config_hash"] and doc["seed"] == 5
    assert (chain / "eta_hat.csv").exists() and (chain / "micro_graph.dot").exists()
    meta = json.loads((chain / "attendance.json").read_text())
    assert meta["config_hash"] == report["config_hash"]


def test_report_refuses_mixed_hashes(chain, tmp_path, capsys):
    other = tmp_path / "other.ini"
    other.write_text(SMALL.replace("sweeps = 20", "sweeps = 30"))
    capsys.readouterr()
    assert run("report", "--config", other, "--output", chain) == cli.EXIT_INPUT
    assert "different config" in capsys.readouterr().err
    assert run("report", "--config", tmp_path / "run.ini", "--seed", 6) == cli.EXIT_INPUT
    assert run("report", "--config", tmp_path / "run.ini") == cli.EXIT_OK


def test_invariant_violation_exit_code(cfg_path, monkeypatch):
    from festgroups.irm import InvariantError

    def broken(ctx):
        raise InvariantError("block counts drifted")

    monkeypatch.setitem(cli.COMMANDS, "irm", broken)
    assert run("irm", "--config", cfg_path) == cli.EXIT_INVARIANT


def test_help_exits_zero(capsys):
    assert cli.main(["--help"]) == 0
    assert "synth" in capsys.readouterr().out


def test_output_override(cfg_path, tmp_path):
    target = tmp_path / "alt"
    assert run("synth", "--config", cfg_path, "--output", target) == 0
    assert (target / "synth_truth.json").exists()
    assert (Path(cfg_path).parent / "data" / "log.csv").exists()
