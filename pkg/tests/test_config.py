import pytest

from ddfem.config import SCHEMA, PipelineConfig, load_config, parse_config
from ddfem.errors import ConfigError


def test_defaults():
    cfg = parse_config("")
    assert cfg == PipelineConfig()
    assert cfg["grid.n_cells"] == 16 and cfg["basis.epsilon"] == 0.9999
    assert cfg.epsilon == 0.9999 and cfg.seed == 0
    assert cfg["sweep.layouts"] == ((2, 2), (4, 4), (8, 8))


def test_parse_values_and_comments():
    cfg = parse_config("""
    # comment
    grid.n_cells = 8   # trailing comment
    basis.fixed_r = 12
    basis.epsilon = 1
    sweep.epsilons = 0.9, untruncated
    sweep.layouts = 2x3, 4X4
    output.dump_fields = no
    """)
    assert cfg["grid.n_cells"] == 8 and cfg["basis.fixed_r"] == 12
    assert cfg.epsilon is None
    assert cfg["sweep.epsilons"] == (0.9, 1.0)
    assert cfg["sweep.layouts"] == ((2, 3), (4, 4))
    assert cfg["output.dump_fields"] is False
    assert cfg.overrides() == {"grid.n_cells": 8, "basis.fixed_r": 12, "basis.epsilon": 1.0,
                               "sweep.epsilons": (0.9, 1.0), "sweep.layouts": ((2, 3), (4, 4)),
                               "output.dump_fields": False}


@pytest.mark.parametrize("text, line, words", [
    ("grid.n_cells = 8\ncoupling.eta = -1\n", 2, "coupling.eta"),
    ("\n\nbogus.key = 3\n", 3, "unknown key"),
    ("grid.n_cells = 8\ngrid.n_cells = 9\n", 2, "duplicate"),
    ("grid.n_cells = eight\n", 1, "integer"),
    ("just text\n", 1, "key = value"),
    ("basis.epsilon =\n", 1, "missing value"),
    ("basis.epsilon = 1.5\n", 1, "out of range"),
    ("basis.epsilon = nan\n", 1, "finite"),
    ("layout.bc = periodic\n", 1, "dirichlet_zero"),
    ("problem = burgers\ncoupling.formulation = constrained_residual\n", None, "periodic"),
    ("basis.port_split = false\n", 1, "strong_condensation"),
    ("sweep.layouts = 2by2\n", 1, "RxC"),
])
def test_errors_name_line(text, line, words):
    with pytest.raises(ConfigError, match=words) as info:
        parse_config(text)
    assert info.value.line == line
    if line is not None:
        assert str(info.value).startswith(f"line {line}:")


def test_burgers_cross_checks():
    ok = parse_config("problem = burgers\nlayout.bc = periodic\ncoupling.formulation = constrained_residual\n")
    assert ok["problem"] == "burgers"
    with pytest.raises(ConfigError, match="t_final"):
        parse_config("problem = burgers\nlayout.bc = periodic\n"
                     "coupling.formulation = constrained_residual\ntrain.dt = 1\n")
    with pytest.raises(ConfigError, match="constrained_residual"):
        parse_config("problem = burgers\nlayout.bc = periodic\n")


def test_echo_round_trip():
    cfg = parse_config("grid.n_cells = 8\nsolve.k1 = 0.1\nbasis.fixed_r = 3\ncoupling.eta = 0.30000000000000004\n"
                       "sweep.layouts = 1x2, 3x3\nsweep.epsilons = 0.99, 1\n")
    again = parse_config(cfg.echo())
    assert again == cfg
    assert set(again.explicit) == set(SCHEMA)


def test_seed_env():
    assert parse_config("train.seed = 4\n", env={"DDFEM_SEED": "77"}).seed == 77
    assert parse_config("train.seed = 4\n", env={}).seed == 4
    with pytest.raises(ConfigError, match="DDFEM_SEED"):
        parse_config("", env={"DDFEM_SEED": "x"})
    with pytest.raises(ConfigError):
        parse_config("", env={"DDFEM_SEED": "-1"})


def test_replace():
    cfg = parse_config("").replace(**{"grid.n_cells": 8})
    assert cfg["grid.n_cells"] == 8 and "grid.n_cells" in cfg.explicit
    with pytest.raises(ConfigError):
        cfg.replace(**{"nope": 1})
    with pytest.raises(ConfigError):
        cfg.replace(**{"grid.n_cells": 1})


def test_load_config(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("grid.n_cells = 4\n")
    assert load_config(p, env={})["grid.n_cells"] == 4
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.cfg")
