import json

import pytest

from pamc.cli import SCHEMA, format_config, main, new_run_dir, parse_lines, resolve_config


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_empty_config_materialises_every_default(tmp_path):
    cfg = resolve_config("complete", {})
    assert set(SCHEMA) <= set(cfg)
    text = format_config(cfg)
    assert "solver.lambda_S = inf" in text and "loop.completion_period_K = 500" in text
    assert text.splitlines() == sorted(text.splitlines())


def test_constraint_error_names_the_key(capsys, tmp_path):
    assert main(["loop", "--outdir", str(tmp_path), "--set", "loop.rank_hint=-1"]) == 1
    err = _err(capsys)
    assert err["key"] == "loop.rank_hint" and err["error"] == "invalid-config"
    assert main(["complete", "--outdir", str(tmp_path), "--set", "solver.rank_hint=0"]) == 1
    assert _err(capsys)["key"] == "solver.rank_hint"


def test_unknown_key_and_type_mismatch(capsys, tmp_path):
    assert main(["complete", "--outdir", str(tmp_path), "--set", "solver.lamda=1"]) == 1
    assert _err(capsys)["key"] == "solver.lamda"
    assert main(["complete", "--outdir", str(tmp_path), "--set", "env.n_states=many"]) == 1
    assert _err(capsys)["key"] == "env.n_states"
    assert main(["study:kappa", "--outdir", str(tmp_path), "--set", "study.bogus=1"]) == 1
    assert _err(capsys)["key"] == "study.bogus"


def test_same_file_parsed_twice_is_identical(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nsolver.lambda_L = 0.5\nenv.sigma = 0.2  # inline\n\nloop.tau = none\n")
    a = resolve_config("complete", parse_lines(path.read_text().splitlines()))
    b = resolve_config("complete", parse_lines(path.read_text().splitlines()))
    assert format_config(a) == format_config(b)
    assert a["solver.lambda_L"] == 0.5 and a["loop.tau"] is None


def test_unknown_command_and_missing_file(capsys, tmp_path):
    assert main(["bogus", "--outdir", str(tmp_path)]) == 1
    assert _err(capsys)["error"] == "unknown-command"
    assert main(["complete", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert main(["study:nope"]) == 1


def test_complete_smoke_and_byte_identical_reruns(tmp_path, capsys):
    args = ["complete", "--outdir", str(tmp_path), "--seed", "7", "--set", "env.n_steps=1500"]
    assert main(args) == 0
    assert main(args) == 0
    first, second = tmp_path / "complete-seed7", tmp_path / "complete-seed7-1"
    for run in (first, second):
        for name in ("resolved_config", "version_stamp", "coverage.csv", "completion/R_hat.csv",
                     "completion/half_width.csv", "completion/summary.txt", "mdp/transitions.csv"):
            assert (run / name).exists(), name
    for name in ("coverage.csv", "completion/R_hat.csv", "completion/half_width.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_loop_smoke(tmp_path):
    args = ["loop", "--outdir", str(tmp_path), "--set", "loop.total_steps=2000",
            "--set", "loop.completion_period_K=1000", "--set", "loop.obs_prob=0.3"]
    assert main(args) == 0
    run = tmp_path / "loop-seed0"
    assert (run / "trace.csv").read_text().startswith("step,event,value\n")
    assert (run / "baseline_trace.csv").exists()
    assert "pamc_regret" in (run / "summary.txt").read_text()


def test_study_kappa_smoke(tmp_path):
    args = ["study:kappa", "--outdir", str(tmp_path), "--set", "sweep.seeds=1",
            "--set", "sweep.values=0.5,0.2", "--set", "study.n_steps=1500", "--set", "study.n_states=10"]
    assert main(args) == 0
    run = tmp_path / "study-kappa-seed0"
    header = (run / "kappa.csv").read_text().splitlines()[0]
    assert header == "epsilon,kappa,kappa_se,error,error_se,n_seeds"
    assert (run / "index.csv").exists() and (run / "resolved_config").exists()


def test_numerical_failure_exits_two(tmp_path, capsys, monkeypatch):
    from pamc import cli
    from pamc.errors import NumericalFailure

    def boom(*a, **k):
        raise NumericalFailure("non-finite objective at iteration 3")

    monkeypatch.setattr(cli, "weighted_pcp", boom)
    assert main(["complete", "--outdir", str(tmp_path), "--set", "env.n_steps=500"]) == 2
    assert _err(capsys)["error"] == "numerical-failure"


def test_run_dirs_never_overwritten(tmp_path):
    a = new_run_dir(tmp_path, "loop", 1)
    b = new_run_dir(tmp_path, "loop", 1)
    c = new_run_dir(tmp_path, "study:kappa", 1)
    assert [a.name, b.name, c.name] == ["loop-seed1", "loop-seed1-1", "study-kappa-seed1"]
