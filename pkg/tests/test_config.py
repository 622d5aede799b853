import pytest

from rasor.config import TrainConfig, expand_grid, load_config, parse_config_text
from rasor.errors import ConfigError


def test_defaults_round_trip_through_text(tmp_path):
    cfg = TrainConfig(hidden_dim=7, objective="bio_crf", dropout=0.25)
    path = tmp_path / "c.cfg"
    path.write_text(cfg.to_text())
    assert load_config(path) == cfg


def test_comments_and_overrides(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# model\nhidden_dim = 12  # small\n\nobjective=membership\n")
    cfg = load_config(path, {"batch_size": "8"})
    assert (cfg.hidden_dim, cfg.objective, cfg.batch_size) == (12, "membership", 8)


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("hiden_dim=3\n")
    with pytest.raises(ConfigError, match="hiden_dim"):
        load_config(path)


def test_missing_file_names_path(tmp_path):
    with pytest.raises(ConfigError, match="nope.cfg"):
        load_config(tmp_path / "nope.cfg")


def test_duplicate_and_malformed_lines():
    with pytest.raises(ConfigError):
        parse_config_text("a=1\na=2\n")
    with pytest.raises(ConfigError):
        parse_config_text("just words\n")


def test_typed_values():
    with pytest.raises(ConfigError):
        TrainConfig.from_mapping({"hidden_dim": "ten"})
    assert TrainConfig.from_mapping({"train_oov": "true"}).train_oov is True


def test_grid_range_enforced_unless_flagged():
    with pytest.raises(ConfigError):
        TrainConfig(passage_layers=4)
    with pytest.raises(ConfigError):
        TrainConfig(decay_multiplier=0.5)
    assert TrainConfig(passage_layers=4, off_grid=True).passage_layers == 4


@pytest.mark.parametrize("changes", [
    {"objective": "pointer"}, {"dropout": 1.0}, {"hidden_dim": 0},
    {"dropout_placement": "weights"}, {"qindep_layer": "3"}, {"membership_scores": "raw"},
])
def test_invalid_values(changes):
    with pytest.raises(ConfigError):
        TrainConfig(**changes)


def test_expand_grid():
    configs = expand_grid("hidden_dim=[25, 50]\ndecay_multiplier=[0.9, 0.95, 1.0]\nseed=3\n")
    assert len(configs) == 6
    assert {(c.hidden_dim, c.decay_multiplier) for c in configs} == {
        (h, m) for h in (25, 50) for m in (0.9, 0.95, 1.0)}
    assert all(c.seed == 3 for c in configs)


def test_grid_file_rejected_by_load_config(tmp_path):
    path = tmp_path / "g.cfg"
    path.write_text("hidden_dim=[25, 50]\n")
    with pytest.raises(ConfigError):
        load_config(path)
