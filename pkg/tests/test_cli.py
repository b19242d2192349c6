import json

import pytest
from click.testing import CliRunner

from poroscale.cli import EXIT_CONFIG, EXIT_GATE, EXIT_NUMERICAL, main


@pytest.fixture()
def runner():
    return CliRunner()


def write_config(tmp_path, **overrides):
    cfg = {"mesh": {"macro_n": 9, "micro_n": 5}, "tau": 0.02, "t_end": 0.06}
    cfg.update(overrides)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return str(path)


def test_help_lists_subcommands(runner):
    result = runner.invoke(main, ["--help"])
    assert result.exit_code == 0
    for name in ("simulate", "mms", "convergence", "probe-sector",
                 "probe-rbound", "contraction", "serve"):
        assert name in result.output


def test_simulate_prints_report(runner, tmp_path):
    cfg = write_config(tmp_path)
    result = runner.invoke(main, ["simulate", "--config", cfg])
    assert result.exit_code == 0
    body = json.loads(result.output)
    assert body["report"]["experiment"] == "simulate"
    assert body["report"]["steps"] == 3
    assert body["config_hash"] == body["report"]["config_hash"]


def test_flag_overrides_reach_the_run(runner, tmp_path):
    cfg = write_config(tmp_path)
    result = runner.invoke(
        main, ["simulate", "--config", cfg, "--tau", "0.03", "--t-end", "0.09"]
    )
    assert result.exit_code == 0
    assert json.loads(result.output)["report"]["steps"] == 3


def test_out_writes_artifacts(runner, tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "artifacts"
    result = runner.invoke(main, ["simulate", "--config", cfg, "--out", str(out)])
    assert result.exit_code == 0
    assert (out / "final.csv").exists()
    assert (out / "history.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["experiment"] == "simulate"


def test_config_error_exits_with_config_code(runner, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"tau": -1.0}), encoding="utf-8")
    result = runner.invoke(main, ["simulate", "--config", str(bad)])
    assert result.exit_code == EXIT_CONFIG
    assert "configuration error" in result.output


def test_missing_config_file_exits_with_config_code(runner, tmp_path):
    result = runner.invoke(
        main, ["simulate", "--config", str(tmp_path / "nope.json")]
    )
    assert result.exit_code == EXIT_CONFIG
    assert "configuration error" in result.output


def test_exit_codes_are_distinct():
    assert (EXIT_CONFIG, EXIT_NUMERICAL, EXIT_GATE) == (1, 2, 3)


def test_gate_refusal_exits_3(runner, tmp_path):
    cfg = write_config(
        tmp_path,
        t0_window=0.08,
        initial={
            "u0": {"name": "product_sine", "params": [3.0, 1.0]},
            "bubble_amp": {"name": "constant", "params": [2.0]},
        },
    )
    result = runner.invoke(main, ["contraction", "--config", cfg])
    assert result.exit_code == EXIT_GATE
    assert "SmallnessViolation" in result.output


def test_numerical_failure_exits_1(runner, tmp_path):
    cfg = write_config(
        tmp_path,
        coefficients={"a1": {"name": "affine", "params": [0.1, -1.0, 0.0]}},
    )
    result = runner.invoke(main, ["simulate", "--config", cfg])
    assert result.exit_code == EXIT_NUMERICAL
    assert "EllipticityViolation" in result.output


def test_dump_matrices_flag(runner, tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "with-matrices"
    result = runner.invoke(
        main,
        ["simulate", "--config", cfg, "--out", str(out), "--dump-matrices"],
    )
    assert result.exit_code == 0
    assert (out / "matrix_macro_interior.txt").exists()
    dumps = sorted(p.name for p in out.glob("matrix_cell_*.txt"))
    assert len(dumps) == 3
