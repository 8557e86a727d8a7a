import math
import warnings

import pytest
import yaml

from drillfunnel.config import (
    ExperimentConfig,
    GridSpec,
    config_from_dict,
    config_to_dict,
    default_config,
    load_config,
    load_preset,
)
from drillfunnel.errors import ConfigurationError
from drillfunnel.model import ArctanScale, RegularizedCoulomb


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    cfg = load_config(path)
    assert cfg.params.ell == 1.0 and cfg.omega == 1.0
    f = cfg.funnel
    assert (f.a, f.b, f.d, f.k, f.alpha, f.beta, f.v_hat) == (8.0, 1.0, 0.1, 1.0, 1.0, 1.0, 1.0)
    assert cfg.reference(3.0) == 5.0
    assert cfg.time.t_end == 10.0 and cfg.n_points == 51
    assert cfg.damping.distributed == ArctanScale(0.3)
    assert cfg.damping.boundary == RegularizedCoulomb(1.0, 1e-3, 0.1, 0.1)
    assert cfg.name == "empty"


def test_l10_preset():
    cfg = load_preset("l10")
    assert cfg.params.ell == 10.0 and cfg.omega == 10.0 and cfg.funnel.omega == 10.0
    assert (cfg.funnel.alpha, cfg.funnel.beta, cfg.funnel.k) == (1.2, 1.2, 1.0)
    b = cfg.damping.boundary
    assert (b.A, b.eps, b.h, b.Delta) == (1.0, 0.001, 0.1, 0.1)
    assert cfg.time.t_end == 100.0 and cfg.n_points == 501


def test_negative_length_rejected():
    with pytest.raises(ConfigurationError, match="ell"):
        config_from_dict({"params": {"ell": -1.0}})


def test_field_level_messages():
    with pytest.raises(ConfigurationError) as info:
        config_from_dict({"funnel": {"k": -1.0, "bogus": 1}, "time": {"t_end": 0.0}, "extra": 1})
    msg = str(info.value)
    for piece in ("funnel.bogus", "config.extra", "funnel:", "t_end"):
        assert piece in msg


def test_parse_error(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("params: [1, 2\n")
    with pytest.raises(ConfigurationError, match="parse"):
        load_config(path)


def test_unknown_preset():
    with pytest.raises(ConfigurationError):
        load_preset("l5")


def test_grid_override_warns():
    with pytest.warns(UserWarning):
        assert GridSpec(dxi=0.02, n_points=41).resolve(1.0) == 41
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert GridSpec(dxi=0.02, n_points=51).resolve(1.0) == 51


def test_echo_roundtrip():
    for cfg in (default_config(), load_preset("l10")):
        echo = config_to_dict(cfg)
        again = config_from_dict(yaml.safe_load(yaml.safe_dump(echo)))
        assert config_to_dict(again) == echo
        assert again.n_points == cfg.n_points and again.funnel == cfg.funnel


def test_theorem_gains_report():
    g = load_preset("l10").theorem_gains()
    assert g["alpha_theorem"] == 1.0 and g["beta_theorem"] == 1.0
    assert g["beta_equals_c_alpha"] and not g["matches_theorem"]
    assert default_config().theorem_gains()["matches_theorem"]


def test_i_sign_top_level():
    assert config_from_dict({"i_sign": "plus"}).funnel.i_sign == "plus"
    with pytest.raises(ConfigurationError):
        config_from_dict({"i_sign": "both"})


def test_engine_validated():
    with pytest.raises(ConfigurationError):
        config_from_dict({"engine": "magic"})
