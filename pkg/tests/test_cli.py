"""Command-line behaviour: files written, exit codes, seed precedence."""

import json

import pytest

import gdpacer.theory as theory
from gdpacer.cli import (ROUNDS_HEADER, SERIES_HEADER, main, render_aggregate_table)


@pytest.fixture(autouse=True)
def _no_ambient_seed(monkeypatch):
    monkeypatch.delenv("GDPACER_SEED", raising=False)


def _config_dict(seed=3):
    data = {
        "num_periods": 6,
        "requests_per_period": 40,
        "rounds": 2,
        "campaigns": [
            {"id": 0, "budget": 20, "recall_prob": 0.5, "quality_model": {"m": 2, "n": 5}},
            {"id": 1, "budget": 30, "recall_prob": 0.4, "quality_model": {"m": 3, "n": 3}},
            {"id": 2, "budget": 60, "recall_prob": 0.6, "quality_model": {"m": 5, "n": 2}},
        ],
    }
    if seed is not None:
        data["seed"] = seed
    return data


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(_config_dict()))
    return str(path)


def _run(tmp_path, config_path, name, *extra):
    out = tmp_path / name
    code = main(["run", "--config", config_path, "--out", str(out), *extra])
    return code, out


# --- run ---------------------------------------------------------------------------

def test_run_writes_outputs(tmp_path, config_path, capsys):
    code, out = _run(tmp_path, config_path, "o1")
    assert code == 0
    rounds = (out / "rounds.csv").read_text().splitlines()
    assert rounds[0] == ROUNDS_HEADER
    assert len(rounds) == 1 + 2 * 3        # 2 rounds x 3 algorithms
    series = (out / "series.csv").read_text().splitlines()
    assert series[0] == SERIES_HEADER
    assert (out / "aggregate.csv").read_text().startswith("algorithm,metric,mean,std")
    table = capsys.readouterr().out
    assert "rcpacing" in table and "delivery_rate" in table and "*" in table


def test_run_reruns_byte_identical(tmp_path, config_path):
    _, o1 = _run(tmp_path, config_path, "o1")
    _, o2 = _run(tmp_path, config_path, "o2")
    for name in ("rounds.csv", "series.csv", "aggregate.csv"):
        assert (o1 / name).read_bytes() == (o2 / name).read_bytes()


def test_run_json_format(tmp_path, config_path):
    code, out = _run(tmp_path, config_path, "oj", "--format", "json")
    assert code == 0
    rounds = json.loads((out / "rounds.json").read_text())
    assert len(rounds) == 6
    assert {"algorithm", "round_index", "delivery_rate", "per_period_spend"} <= set(rounds[0])
    agg = json.loads((out / "aggregate.json").read_text())
    assert "rcpacing" in agg and "mean" in agg["rcpacing"]["avg_ctr"]
    assert (out / "series.csv").exists()


def test_run_seed_flag_overrides_config(tmp_path, config_path):
    _, base = _run(tmp_path, config_path, "base")               # config seed 3
    _, flagged = _run(tmp_path, config_path, "flag", "--seed", "5")
    assert (base / "rounds.csv").read_bytes() != (flagged / "rounds.csv").read_bytes()

    path5 = tmp_path / "seed5.json"
    path5.write_text(json.dumps(_config_dict(seed=5)))
    _, cfg5 = _run(tmp_path, str(path5), "cfg5")
    assert (flagged / "rounds.csv").read_bytes() == (cfg5 / "rounds.csv").read_bytes()


def test_run_env_seed_used_when_config_has_none(tmp_path, monkeypatch):
    bare = tmp_path / "bare.json"
    bare.write_text(json.dumps(_config_dict(seed=None)))
    monkeypatch.setenv("GDPACER_SEED", "5")
    _, env_out = _run(tmp_path, str(bare), "env")
    monkeypatch.delenv("GDPACER_SEED")
    _, flag_out = _run(tmp_path, str(bare), "flag", "--seed", "5")
    assert (env_out / "rounds.csv").read_bytes() == (flag_out / "rounds.csv").read_bytes()


def test_run_config_seed_beats_env(tmp_path, config_path, monkeypatch):
    monkeypatch.setenv("GDPACER_SEED", "5")
    _, env_out = _run(tmp_path, config_path, "env")             # config seed 3 wins
    monkeypatch.delenv("GDPACER_SEED")
    _, plain = _run(tmp_path, config_path, "plain")
    assert (env_out / "rounds.csv").read_bytes() == (plain / "rounds.csv").read_bytes()


def test_run_invalid_env_seed(tmp_path, config_path, monkeypatch, capsys):
    monkeypatch.setenv("GDPACER_SEED", "five")
    bare = tmp_path / "bare.json"
    bare.write_text(json.dumps(_config_dict(seed=None)))
    code, _ = _run(tmp_path, str(bare), "x")
    assert code == 1
    assert "GDPACER_SEED" in capsys.readouterr().err


def test_run_algorithms_filter(tmp_path, config_path):
    code, out = _run(tmp_path, config_path, "only", "--algorithms", "dmd")
    assert code == 0
    rows = (out / "rounds.csv").read_text().splitlines()[1:]
    assert len(rows) == 2 and all(r.startswith("dmd,") for r in rows)


def test_run_unknown_algorithm_rejected(tmp_path, config_path, capsys):
    code, _ = _run(tmp_path, config_path, "bad", "--algorithms", "magic")
    assert code == 1
    assert "unknown algorithms" in capsys.readouterr().err


def test_run_refuses_overwrite_without_force(tmp_path, config_path, capsys):
    _, out = _run(tmp_path, config_path, "same")
    code = main(["run", "--config", config_path, "--out", str(out)])
    assert code == 1
    assert "refusing to overwrite" in capsys.readouterr().err
    code = main(["run", "--config", config_path, "--out", str(out), "--force"])
    assert code == 0


def test_run_malformed_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    code = main(["run", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "invalid JSON" in capsys.readouterr().err


def test_run_missing_config_file(tmp_path, capsys):
    code = main(["run", "--config", str(tmp_path / "ghost.json"),
                 "--out", str(tmp_path / "o")])
    assert code == 1
    assert "config error" in capsys.readouterr().err


# --- validate ------------------------------------------------------------------------

def test_validate_passes(capsys):
    assert main(["validate"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 6 and "FAIL" not in out
    assert "survival-ratio-monotonicity" in out


def test_validate_narrow(capsys):
    assert main(["validate", "--narrow"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4
    assert "percentile-linear-bound" not in out


def test_validate_broken_check_exits_3(monkeypatch, capsys):
    monkeypatch.setattr(theory, "fluctuation_ratio",
                        lambda m, n, a, delta=0.05: 2.0 - a)
    assert main(["validate", "--narrow"]) == 3
    out = capsys.readouterr().out
    assert "FAIL  survival-ratio-monotonicity" in out


# --- ablate --------------------------------------------------------------------------

def test_ablate_grid(tmp_path, capsys):
    data = _config_dict()
    data["ablation"] = {"slope_k": [0.0, 10.0]}
    data["algorithms"] = ["dmd", "rcpacing"]
    path = tmp_path / "ab.json"
    path.write_text(json.dumps(data))
    out = tmp_path / "ab"
    assert main(["ablate", "--config", str(path), "--out", str(out)]) == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0].startswith("slope_k,algorithm,delivery_rate_mean,delivery_rate_std")
    assert len(lines) == 1 + 2 * 2          # 2 cells x 2 algorithms
    assert {l.split(",")[0] for l in lines[1:]} == {"0.0", "10.0"}
    assert "[slope_k=0.0]" in capsys.readouterr().out


def test_ablate_requires_grid(tmp_path, config_path, capsys):
    code = main(["ablate", "--config", config_path, "--out", str(tmp_path / "x")])
    assert code == 1
    assert "ablation" in capsys.readouterr().err


# --- report --------------------------------------------------------------------------

def test_report_renders_table(tmp_path, config_path, capsys):
    _, out = _run(tmp_path, config_path, "r1")
    capsys.readouterr()
    assert main(["report", str(out / "rounds.csv")]) == 0
    table = capsys.readouterr().out
    assert "dmd" in table and "rcpacing" in table and "avg_ctr" in table


def test_report_writes_aggregate(tmp_path, config_path):
    _, out = _run(tmp_path, config_path, "r2")
    dest = tmp_path / "agg"
    assert main(["report", str(out / "rounds.csv"), "--out", str(dest)]) == 0

    def parse(p):
        rows = [l.split(",") for l in p.read_text().splitlines()[1:]]
        return {(a, m): (float(x), float(s)) for a, m, x, s in rows}

    orig, rebuilt = parse(out / "aggregate.csv"), parse(dest / "aggregate.csv")
    assert rebuilt.keys() == orig.keys()
    for key, (mean, std) in orig.items():
        # rounds.csv carries 10 significant digits, so the round trip is
        # near-exact but not byte-exact
        assert rebuilt[key][0] == pytest.approx(mean, rel=1e-8, abs=1e-9)
        assert rebuilt[key][1] == pytest.approx(std, rel=1e-6, abs=1e-9)


def test_report_single_row_file(tmp_path, capsys):
    path = tmp_path / "one.csv"
    path.write_text(ROUNDS_HEADER + "\nrcpacing,0,0.99,7.5,0.08,\n")
    assert main(["report", str(path)]) == 0
    assert "rcpacing" in capsys.readouterr().out


@pytest.mark.parametrize("body,needle", [
    ("wrong,header\nx\n", ":1: expected header"),
    (ROUNDS_HEADER + "\ndmd,0,1.0\n", ":2: expected 6 fields"),
    (ROUNDS_HEADER + "\ndmd,zero,1.0,2.0,3.0,\n", ":2:"),
    (ROUNDS_HEADER + "\n", "no data rows"),
])
def test_report_malformed_inputs(tmp_path, capsys, body, needle):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    assert main(["report", str(path)]) == 1
    assert needle in capsys.readouterr().err


def test_report_missing_file(tmp_path, capsys):
    assert main(["report", str(tmp_path / "ghost.csv")]) == 1
    assert "input error" in capsys.readouterr().err


# --- parser --------------------------------------------------------------------------

def test_usage_errors_map_to_exit_1(capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    capsys.readouterr()


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "gdpacer" in capsys.readouterr().out


def test_render_table_marks_best():
    agg = {
        "dmd": {"avg_ctr": (0.08, 0.01), "unsmoothness": (20.0, 1.0)},
        "rcpacing": {"avg_ctr": (0.10, 0.01), "unsmoothness": (7.0, 1.0)},
    }
    table = render_aggregate_table(agg)
    lines = table.splitlines()
    assert lines[0].split()[:3] == ["algorithm", "unsmoothness", "avg_ctr"]
    rcp_line = next(l for l in lines if l.startswith("rcpacing"))
    assert rcp_line.count("*") == 2        # best on both metrics
