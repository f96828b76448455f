import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vfd.config import boundary_rates, experiment_config, parse_config, parse_text
from vfd.errors import ParseError, ValidationError


def test_minimal_profile_defaults():
    cfg = parse_config('command = "profile"\n[model]\nm = -0.5\nmu = 1\n')
    assert cfg.command == "profile"
    assert cfg.sections["model"] == {"m": -0.5, "mu": 1.0}
    assert "dr" not in cfg.sections["profile"]  # filled by the profile module
    assert cfg.sections["domain"]["R_list"] == [10.0, 20.0, 40.0]


def test_values_and_comments():
    raw = parse_text('# header\n[domain]\nR_list = [10, 20.5, 4e1]  # trailing\n'
                     '[initial]\nkind = "bump"\n[profile]\nT = 2\n')
    assert raw["domain"]["R_list"] == [10, 20.5, 40.0]
    assert raw["initial"]["kind"] == "bump"


@pytest.mark.parametrize("text,msg", [
    ("[model]\nm = 0.5", "m must lie in (-1,0)"),
    ("[model]\nmu = -1", "mu must be > 0"),
    ("[domain]\nR_list = [20, 10]", "domain.R_list must be strictly increasing"),
    ("[model]\nbogus = 1", "model.bogus unknown key"),
    ("[nope]\na = 1", "[nope] unknown section"),
    ("[window]\na = 0.5\nb = 0.1", "window.b must exceed window.a"),
])
def test_validation_errors(text, msg):
    with pytest.raises(ValidationError) as e:
        parse_config(text, "converge")
    assert str(e.value) == msg


@pytest.mark.parametrize("text,line,col", [
    ("[model]\nm = -0.5 x", 2, 10),
    ("[model]\nm -0.5", 2, 3),
    ("[model\nm = 1", 1, 1),
    ('[initial]\nkind = "bump', 2, 8),
    ("[domain]\nR_list = [1, 2", 2, 15),
    ("[model]\nm = -0.5\nm = -0.4", 3, 1),
])
def test_parse_errors_locate(text, line, col):
    with pytest.raises(ParseError) as e:
        parse_config(text, "profile")
    assert (e.value.line, e.value.column) == (line, col)


def test_missing_command():
    with pytest.raises(ValidationError):
        parse_config("[model]\nm = -0.5")


def test_boundary_steps_and_polynomials():
    cfg = parse_config("[boundary]\nf = [1, 1]\ng_values = [1, 2]\ng_breaks = [0.3]\n", "solve")
    f, g = boundary_rates(cfg)
    assert f(0.5) == 1.5 and g(0.1) == 1.0 and g(0.4) == 2.0
    with pytest.raises(ValidationError):
        parse_config("[boundary]\nf_values = [1, 2]\n", "solve")
    ecfg = experiment_config(cfg)
    assert ecfg.f(0.5) == 1.5


def test_hash_tracks_values():
    a = parse_config("[model]\nm = -0.5", "solve")
    b = parse_config("[model]\nm = -0.5\n", "solve")
    c = parse_config("[model]\nm = -0.4", "solve")
    assert a.digest() == b.digest() != c.digest()


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.99, -0.01), st.floats(0.01, 100.0))
def test_number_roundtrip(m, mu):
    cfg = parse_config(f"[model]\nm = {m!r}\nmu = {mu!r}\n", "profile")
    assert cfg.sections["model"]["m"] == m and cfg.sections["model"]["mu"] == mu
