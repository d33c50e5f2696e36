import pytest

from tcmicp.config import KEYS, ConfigError, RunConfig, format_config, load_config, parse_config


def test_empty_document_gives_defaults():
    assert parse_config("") == RunConfig()


def test_values_are_typed():
    cfg = parse_config(
        "k = 4\noutlier_factor = 2.5  # tighter\nreciprocal = false\n"
        "seed_radius = none\ngraph_threshold = 3.5\ninputs = a.xyz  b.ply\noutput = m.ply\n"
        "rng_seed = 9\nrefine_objective = tcm\n"
    )
    assert cfg.preprocess.k == 4 and cfg.preprocess.outlier_factor == 2.5
    assert cfg.register.reciprocal is False and cfg.register.refine_objective == "tcm"
    assert cfg.preprocess.seed_radius is None and cfg.graph_threshold == 3.5
    assert cfg.inputs == ("a.xyz", "b.ply") and cfg.output == "m.ply"
    assert cfg.preprocess.rng_seed == 9 and cfg.register.rng_seed == 9


def test_with_seed_propagates():
    cfg = RunConfig().with_seed(42)
    assert cfg.preprocess.rng_seed == cfg.register.rng_seed == 42


@pytest.mark.parametrize("text,line", [
    ("k = 4\nbogus = 1\n", 2),
    ("k = 4\nk = 5\n", 2),
    ("just words\n", 1),
    ("k = four\n", 1),
    ("reciprocal = maybe\n", 1),
])
def test_errors_name_the_line(text, line):
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "run.cfg")
    assert exc.value.line == line
    assert f"run.cfg, line {line}" in str(exc.value)


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        parse_config("k = 0\n")
    with pytest.raises(ConfigError):
        parse_config("graph_threshold = -1\n")


def test_round_trip():
    text = "k = 3\nanneal_T0 = 0.0\ninputs = x.xyz y.xyz\nrng_seed = 4\ncoarse = false\n"
    cfg = parse_config(text)
    assert parse_config(format_config(cfg)) == cfg
    assert parse_config(format_config(RunConfig())) == RunConfig()


def test_every_key_is_formatted():
    out = format_config(RunConfig(inputs=("a",), output="b"))
    assert [line.split(" = ")[0] for line in out.splitlines()] == list(KEYS)


def test_load_config(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("max_lp_rounds = 7\n")
    assert load_config(p).register.max_lp_rounds == 7
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")
