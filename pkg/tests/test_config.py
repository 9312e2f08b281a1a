import json

import pytest

from dfadkd.config import ConfigError, ExperimentConfig, build_config, load_config, save_resolved


def test_defaults_validate():
    cfg = build_config({})
    assert cfg.alpha == 0.1 and cfg.tau == 1.0
    assert cfg.train_config().alpha == cfg.alpha


def test_unknown_keys_listed():
    with pytest.raises(ConfigError, match="alhpa.*bogus|bogus.*alhpa"):
        build_config({"alhpa": 1.0, "bogus": 2})


def test_wrong_types_listed():
    with pytest.raises(ConfigError, match="epochs"):
        build_config({"epochs": "ten"})
    with pytest.raises(ConfigError, match="use_bn_stat"):
        build_config({"use_bn_stat": 1})


def test_int_accepted_for_float():
    assert build_config({"alpha": 100}).alpha == 100.0


@pytest.mark.parametrize("values", [{"alpha": -1.0}, {"batch_size": 1, "n_generators": 2},
                                    {"image_size": 12}, {"weight_bits": 9}, {"teacher_bn_mode": "x"}])
def test_invalid_values_rejected(values):
    with pytest.raises(ConfigError):
        build_config(values)


def test_missing_file_names_path(tmp_path):
    missing = tmp_path / "nope.json"
    with pytest.raises(ConfigError, match="nope.json"):
        load_config(missing)


def test_file_overrides_and_seed(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"alpha": 2.0, "epochs": 3, "generator_channels": [8, 8, 4, 4]}))
    cfg = load_config(path, ["epochs=5", "use_batch_entropy=false", "generator_channels=16,8,8,4"], seed=7)
    assert (cfg.alpha, cfg.epochs, cfg.use_batch_entropy, cfg.seed) == (2.0, 5, False, 7)
    assert cfg.generator_channels == (16, 8, 8, 4)
    with pytest.raises(ConfigError, match="nokey"):
        load_config(path, ["nokey=1"])
    with pytest.raises(ConfigError, match="epochs"):
        load_config(path, ["epochs=abc"])


def test_resolved_roundtrip(tmp_path):
    cfg = build_config({"alpha": 3.0, "seed": 4})
    save_resolved(tmp_path / "config.resolved", cfg)
    again = load_config(tmp_path / "config.resolved")
    assert again == cfg
    assert isinstance(again, ExperimentConfig)
