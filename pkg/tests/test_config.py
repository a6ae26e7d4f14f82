import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from lagcns.config import DEFAULTS, from_dict, parse_config, serialize
from lagcns.errors import ConfigError
from lagcns.fields import Field, Grid


def _write(tmp_path, text, name="run.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_minimal_config_gets_defaults(tmp_path):
    cfg = parse_config(_write(tmp_path, "grid: {dim: 1, extents: [17]}\n"))
    assert cfg["grid"]["extents"] == [17]
    assert cfg["norms"] == {"p": 4.0, "q": 8.0}
    assert cfg["picard"]["tol"] == DEFAULTS["picard"]["tol"]
    assert cfg["global"]["quantity"] == "dt_u_Lq"
    assert cfg.grid() == Grid((17,))


def test_inadmissible_exponents(tmp_path):
    with pytest.raises(ConfigError) as exc:
        parse_config(_write(tmp_path, "norms: {p: 3, q: 4}\n"))
    msg = str(exc.value)
    assert "2/p+3/q<1 violated" in msg and "1.417" in msg


def test_negative_bulk_viscosity(tmp_path):
    with pytest.raises(ConfigError, match="zeta must be >= 0"):
        parse_config(_write(tmp_path, "material: {zeta: -0.1}\n"))


def test_all_violations_are_reported(tmp_path):
    text = "material: {zeta: -0.1, mu: 0}\nnorms: {p: 3, q: 4}\ngrid: {bogus: 1}\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(_write(tmp_path, text))
    v = exc.value.violations
    assert any("unknown key 'grid.bogus'" in s for s in v)
    assert any("zeta" in s for s in v) and any("material.mu" in s for s in v) and any("2/p" in s for s in v)


def test_parse_error_reports_line(tmp_path):
    with pytest.raises(ConfigError, match=r"parse error at line 4"):
        parse_config(_write(tmp_path, "grid:\n  dim: 1\n  extents: [17\ntime: {T: 1}\n"))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "absent.yaml")


def test_family_constraints():
    with pytest.raises(ConfigError, match="rigid_rotation needs"):
        from_dict({"motion": {"family": "rigid_rotation", "amplitude": 0.1}})
    with pytest.raises(ConfigError, match="equilibrium needs"):
        from_dict({"motion": {"family": "rigid_translation", "amplitude": 0.1}, "initial": {"family": "equilibrium"}})
    with pytest.raises(ConfigError, match="motion.family must be one of"):
        from_dict({"motion": {"family": "wobble"}})


def test_custom_csv_initial_data(tmp_path):
    g = Grid((9,))
    Field(g, np.full(9, 1.1)).to_csv(tmp_path / "rho.csv")
    Field(g, np.zeros((9, 1))).to_csv(tmp_path / "u.csv")
    cfg = parse_config(_write(tmp_path, "grid: {extents: [9]}\ninitial: {family: custom_csv, rho_csv: rho.csv, u_csv: u.csv}\n"))
    data = cfg.initial_data()
    np.testing.assert_array_equal(data.rho0, 1.1)


def test_round_trip(tmp_path):
    cfg = parse_config(_write(tmp_path, "seed: 4\ngrid: {dim: 2, extents: [9, 11]}\nmotion: {family: rigid_rotation, amplitude: 0.2}\ninitial: {family: rigid}\n"))
    again = from_dict(yaml.safe_load(serialize(cfg)))
    assert again == cfg


@settings(max_examples=30, deadline=None)
@given(
    p=st.floats(2.5, 20), q=st.floats(3.5, 40), T=st.floats(0.01, 5), n=st.integers(1, 200),
    zeta=st.floats(0, 3), dim=st.integers(1, 3),
)
def test_round_trip_property(p, q, T, n, zeta, dim):
    raw = {"norms": {"p": p, "q": q}, "time": {"T": T, "nsteps": n}, "material": {"zeta": zeta},
           "grid": {"dim": dim, "extents": [5] * dim}}
    try:
        cfg = from_dict(raw)
    except ConfigError as exc:
        assert 2 / p + 3 / q >= 1 and any("2/p" in v for v in exc.violations)
        return
    assert from_dict(yaml.safe_load(serialize(cfg))) == cfg
