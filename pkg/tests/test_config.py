import json

import numpy as np
import pytest
from pydantic import ValidationError

from poroscale.config import (
    EXPERIMENT_NAMES,
    RunConfig,
    config_hash,
    default_config,
    load_config,
)
from poroscale.experiments import build_problem


def test_default_config_is_valid_and_builds():
    cfg = default_config()
    assert cfg.experiment == "simulate"
    problem = build_problem(cfg)
    assert problem.macro.n_total == cfg.mesh.macro_n
    assert problem.micro.n == cfg.mesh.micro_n
    assert problem.solver.tau == cfg.tau
    # initial data passed validation: trace-compatible and porosity in range
    state = problem.state0
    for b in problem.micro.boundary_idx:
        assert np.array_equal(state.U.values[:, b], state.u.values)


def test_experiment_catalog():
    assert set(EXPERIMENT_NAMES) == {
        "simulate",
        "mms",
        "convergence",
        "probe-sector",
        "probe-rbound",
        "contraction",
    }
    with pytest.raises(ValidationError):
        RunConfig(experiment="nonsense")


def test_load_config_round_trip(tmp_path):
    cfg = RunConfig(tau=0.005, t_end=0.1, seed=7)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg.model_dump(mode="json")), encoding="utf-8")
    loaded = load_config(str(path))
    assert loaded == cfg
    assert config_hash(loaded) == config_hash(cfg)


def test_hash_is_stable_and_sensitive():
    assert config_hash(RunConfig()) == config_hash(default_config())
    base = config_hash(RunConfig())
    assert config_hash(RunConfig(tau=0.02)) != base
    assert config_hash(RunConfig(seed=1)) != base
    assert len(base) == 64
    assert set(base) <= set("0123456789abcdef")


def test_unknown_keys_rejected():
    with pytest.raises(ValidationError):
        RunConfig.model_validate({"experiment": "simulate", "bogus": 1})
    with pytest.raises(ValidationError):
        RunConfig.model_validate({"mesh": {"macro_n": 17, "makro_dim": 1}})


def test_expression_arity_cross_checks():
    # affine radius over a 2-d macro domain needs 3 parameters
    with pytest.raises(ValidationError, match="geometry.radius"):
        RunConfig.model_validate(
            {
                "mesh": {"macro_dim": 2, "macro_n": 9, "micro_n": 5},
                "geometry": {"radius": {"name": "affine", "params": [1.0, 0.2]}},
            }
        )
    with pytest.raises(ValidationError, match="initial.u0"):
        RunConfig.model_validate(
            {"initial": {"u0": {"name": "product_sine", "params": [0.1, 1.0, 3.0]}}}
        )
    # the same specs with the right counts pass
    RunConfig.model_validate(
        {
            "mesh": {"macro_dim": 2, "macro_n": 9, "micro_n": 5},
            "geometry": {"radius": {"name": "affine", "params": [1.0, 0.1, 0.1]}},
        }
    )


def test_center_expressions_match_micro_dim():
    with pytest.raises(ValidationError, match="center"):
        RunConfig.model_validate(
            {
                "geometry": {
                    "micro_dim": 2,
                    "center": [{"name": "constant", "params": [0.0]}],
                }
            }
        )


def test_coefficient_guards():
    with pytest.raises(ValidationError, match="eta"):
        RunConfig.model_validate({"coefficients": {"eta": 0.0}})
    with pytest.raises(ValidationError, match="parameters"):
        RunConfig.model_validate(
            {"coefficients": {"a1": {"name": "affine", "params": [1.0]}}}
        )
    with pytest.raises(ValidationError, match="ordered"):
        RunConfig.model_validate({"coefficients": {"state_box": [2.0, -2.0]}})


def test_porosity_guards():
    with pytest.raises(ValidationError, match="C_G < c_g"):
        RunConfig.model_validate({"porosity": {"cap": 0.6, "c_g": 0.5}})
    with pytest.raises(ValidationError, match="m_min < m_max"):
        RunConfig.model_validate({"porosity": {"m_min": 1.0, "m_max": 0.5}})
    with pytest.raises(ValidationError, match=r"\(0, cap\]"):
        RunConfig.model_validate(
            {"porosity": {"name": "saturating", "params": [0.5], "cap": 0.45}}
        )


def test_solver_and_probe_guards():
    with pytest.raises(ValidationError, match="contraction_target"):
        RunConfig(contraction_target=1.0)
    with pytest.raises(ValidationError, match="window_shrink"):
        RunConfig(window_shrink=0.0)
    with pytest.raises(ValidationError, match="positive"):
        RunConfig(tau=-0.1)
    with pytest.raises(ValidationError, match="half-angle"):
        RunConfig.model_validate({"probe": {"angle": 2.0}})
    with pytest.raises(ValidationError, match="radius"):
        RunConfig.model_validate({"probe": {"radius_min": 10.0, "radius_max": 1.0}})
    with pytest.raises(ValidationError, match="at least 4"):
        RunConfig.model_validate({"mesh": {"macro_n": 3}})
    with pytest.raises(ValidationError, match="3 levels"):
        RunConfig.model_validate({"mms": {"levels": 2}})
    with pytest.raises(ValidationError, match="at least 1"):
        RunConfig.model_validate({"tolerances": {"picard_max": 0}})


def test_probe_helpers_follow_config():
    cfg = RunConfig()
    problem = build_problem(cfg)
    spec = problem.sector_spec()
    assert spec.angle == cfg.probe.angle
    assert spec.n_radii == cfg.probe.n_radii
    nodes = problem.probe_nodes()
    assert len(nodes) == 5
    assert all(n in problem.macro.interior_idx for n in nodes)
    cfg2 = RunConfig.model_validate({"probe": {"nodes": [3, 8]}})
    assert build_problem(cfg2).probe_nodes() == [3, 8]
