import json
import math

import pytest

from nsopt.cli import main
from nsopt.config import ConvexRateConfig
from nsopt.experiments import RunReport, exp_convex_rate

CONVEX_TOML = "T_list = [25, 100, 400]\nrepetitions = 2\n"
FAILING_SENSING_TOML = (
    "d = 6\nr = 1\nn = 10\nrepetitions = 1\nsteps = 50\neta = 0.02\n"
    "sigma_p = 0.05\nvalidation = 20\nval_every = 25\n"
)


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# ---------------------------------------------------------------------------
# bounds subcommand


def test_bounds_values(capsys):
    code = main(["bounds", "--C", "1", "--D", "1", "--sigma", "1", "--T", "32"])
    assert code == 0
    out = capsys.readouterr().out
    vals = {}
    for line in out.strip().split("\n"):
        name, _, v = line.partition(" = ")
        vals[name] = float(v)
    assert vals["theorem1_rhs"] == pytest.approx(0.3125)
    assert vals["theorem2_rhs"] == pytest.approx(1.0 / 32.0)
    assert vals["optimal_eta"] == pytest.approx(0.25)


def test_bounds_json_and_convex_pair(capsys):
    code = main([
        "bounds", "--C", "1", "--D", "1", "--sigma", "1",
        "--T", "25", "--R", "1", "--G", "1", "--json",
    ])
    assert code == 0
    vals = json.loads(capsys.readouterr().out)
    assert vals["convex_eta"] == pytest.approx(1.0 / (2.0 * math.sqrt(25)))
    assert vals["convex_bound"] == pytest.approx(1.25 / math.sqrt(25))


def test_bounds_half_convex_pair_rejected(capsys):
    code = main(["bounds", "--C", "1", "--D", "1", "--sigma", "1", "--R", "1"])
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_bounds_invalid_inputs(capsys):
    code = main(["bounds", "--C", "-1", "--D", "1", "--sigma", "1"])
    assert code == 2


def test_bounds_csv_out(tmp_path, capsys):
    out = str(tmp_path / "b.csv")
    code = main(["bounds", "--C", "2", "--D", "1", "--sigma", "0.5", "--out", out])
    assert code == 0
    lines = (tmp_path / "b.csv").read_text().strip().split("\n")
    assert lines[0] == "name,value"
    names = [l.split(",")[0] for l in lines[1:]]
    assert names == ["theorem1_rhs", "theorem2_rhs", "optimal_eta"]


# ---------------------------------------------------------------------------
# experiment subcommands: exit codes


def test_passing_run_exits_zero(tmp_path, capsys):
    cfg = _write(tmp_path, "c.toml", CONVEX_TOML)
    code = main(["convex-rate", "--config", cfg])
    out = capsys.readouterr().out
    assert code == 0
    assert out.startswith("experiment: convex_rate")
    assert out.strip().endswith("result: PASS")


def test_failing_verdict_exits_one(tmp_path, capsys):
    cfg = _write(tmp_path, "s.toml", FAILING_SENSING_TOML)
    code = main(["sensing", "--config", cfg])
    out = capsys.readouterr().out
    assert code == 1
    assert "result: FAIL" in out


def test_missing_config_exits_two(capsys):
    code = main(["convex-rate", "--config", "/does/not/exist.toml"])
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_unknown_key_exits_two(tmp_path, capsys):
    cfg = _write(tmp_path, "c.toml", "bogus = 1\n")
    code = main(["convex-rate", "--config", cfg])
    assert code == 2
    assert "bogus" in capsys.readouterr().err


def test_experiment_mismatch_exits_two(tmp_path, capsys):
    cfg = _write(tmp_path, "c.toml", 'experiment = "taylor"\n')
    code = main(["convex-rate", "--config", cfg])
    assert code == 2


def test_bad_cli_usage_exits_two(capsys):
    assert main([]) == 2
    assert main(["no-such-command"]) == 2
    capsys.readouterr()


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "bounds" in capsys.readouterr().out


def test_unwritable_out_exits_two(tmp_path, capsys):
    cfg = _write(tmp_path, "c.toml", "T_list = [25, 100]\nrepetitions = 1\n")
    code = main(["convex-rate", "--config", cfg, "--out", str(tmp_path / "nodir" / "x.csv")])
    assert code == 2
    assert "cannot write" in capsys.readouterr().err


def test_full_flag_is_accepted(capsys):
    # parse path only: a broken config keeps the heavy preset from running
    code = main(["sensing", "--full", "--config", "/does/not/exist.toml"])
    assert code == 2
    capsys.readouterr()


# ---------------------------------------------------------------------------
# outputs and determinism


def test_json_flag_round_trips(tmp_path, capsys):
    cfg = _write(tmp_path, "c.toml", CONVEX_TOML)
    code = main(["convex-rate", "--config", cfg, "--json"])
    assert code == 0
    report = RunReport.from_json(capsys.readouterr().out)
    assert report.experiment == "convex_rate"
    assert report.verify()


def test_csv_out_matches_direct_api(tmp_path, capsys):
    cfg_path = _write(tmp_path, "c.toml", CONVEX_TOML)
    out = tmp_path / "r.csv"
    code = main(["convex-rate", "--config", cfg_path, "--out", str(out)])
    capsys.readouterr()
    assert code == 0
    direct = exp_convex_rate(ConvexRateConfig(T_list=(25, 100, 400), repetitions=2))
    assert out.read_text() == direct.to_csv()


def test_seed_flag_changes_results(tmp_path, capsys):
    cfg = _write(tmp_path, "c.toml", "T_list = [25, 100]\nrepetitions = 2\n")
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    c = tmp_path / "c.csv"
    main(["convex-rate", "--config", cfg, "--seed", "1", "--out", str(a)])
    main(["convex-rate", "--config", cfg, "--seed", "2", "--out", str(b)])
    main(["convex-rate", "--config", cfg, "--seed", "1", "--out", str(c)])
    capsys.readouterr()
    assert a.read_text() != b.read_text()
    assert a.read_text() == c.read_text()


def test_threads_flag_keeps_bytes(tmp_path, capsys):
    cfg = _write(tmp_path, "c.toml", CONVEX_TOML)
    one = tmp_path / "one.csv"
    four = tmp_path / "four.csv"
    main(["convex-rate", "--config", cfg, "--out", str(one)])
    main(["convex-rate", "--config", cfg, "--threads", "4", "--out", str(four)])
    capsys.readouterr()
    assert one.read_bytes() == four.read_bytes()


def test_threads_env_fallback(tmp_path, capsys, monkeypatch):
    cfg = _write(tmp_path, "c.toml", CONVEX_TOML)
    env = tmp_path / "env.csv"
    monkeypatch.setenv("NSO_THREADS", "3")
    code = main(["convex-rate", "--config", cfg, "--out", str(env)])
    capsys.readouterr()
    assert code == 0
    base = tmp_path / "base.csv"
    monkeypatch.delenv("NSO_THREADS")
    main(["convex-rate", "--config", cfg, "--out", str(base)])
    capsys.readouterr()
    assert env.read_bytes() == base.read_bytes()


def test_bad_threads_rejected(tmp_path, capsys, monkeypatch):
    cfg = _write(tmp_path, "c.toml", CONVEX_TOML)
    assert main(["convex-rate", "--config", cfg, "--threads", "0"]) == 2
    monkeypatch.setenv("NSO_THREADS", "many")
    assert main(["convex-rate", "--config", cfg]) == 2
    capsys.readouterr()


def test_defaults_used_without_config(capsys):
    # taylor with the stock config is quick and passes
    code = main(["taylor"])
    out = capsys.readouterr().out
    assert code == 0
    assert "result: PASS" in out
