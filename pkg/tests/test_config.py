from __future__ import annotations

import pytest

from sslmargin.config import (
    ConfigError,
    TrainConfig,
    config_from_flat,
    dump_run_spec,
    flatten,
    parse_run_spec,
)


class TestDefaults:
    def test_training_defaults(self):
        cfg = TrainConfig()
        assert (cfg.tau, cfg.q, cfg.delta, cfg.lam) == (0.95, 0.95, 0.997, 1.0)
        assert (cfg.batch_size, cfg.ratio, cfg.base_lr, cfg.momentum) == (32, 7, 0.03, 0.9)
        assert cfg.validate() is cfg

    def test_flat_keys_cover_every_field(self):
        flat = TrainConfig().to_flat()
        assert "dataset.labels_per_class" in flat and "network.hidden" in flat
        assert config_from_flat(flat) == TrainConfig()


class TestParsing:
    def test_minimal_file(self):
        spec = parse_run_spec('method = "fixmatch"\n')
        assert spec.config.method == "fixmatch"
        assert spec.seeds == [0]

    def test_sections_and_dotted_keys_agree(self):
        a = parse_run_spec('method = "flexmatch"\n[dataset]\nlabels_per_class = 6\n')
        b = parse_run_spec('method = "flexmatch"\ndataset.labels_per_class = 6\n')
        assert a.config == b.config
        assert a.config.dataset.labels_per_class == 6

    def test_missing_method_is_named(self):
        with pytest.raises(ConfigError) as exc:
            parse_run_spec("epochs = 3\n")
        assert exc.value.key == "method"

    @pytest.mark.parametrize(
        "text,key",
        [
            ('method = "fixmatch"\nlearning_rate = 0.1\n', "learning_rate"),
            ('method = "fixmatch"\ndataset.colour = 1\n', "dataset.colour"),
            ('method = "fixmatch"\noptim.lr = 1\n', "optim.lr"),
            ('method = "fixmatch"\nepochs = "ten"\n', "epochs"),
            ('method = "fixmatch"\nepochs = 2.5\n', "epochs"),
            ('method = "fixmatch"\ntau = true\n', "tau"),
            ('method = "fixmatch"\ntau = 1.5\n', "tau"),
            ('method = "nomatch"\n', "method"),
            ('method = "fixmatch"\nseeds = []\n', "seeds"),
            ('method = "fixmatch"\nseed = 1\nseeds = [2]\n', "seed"),
            ('method = "fixmatch"\nnetwork.hidden = [8, "x"]\n', "network.hidden"),
            ('method = "marginmatch"\ncombine = "decay"\ndelta = 1.0\n', "delta"),
            ("method = [", "<file>"),
        ],
    )
    def test_rejections_name_the_key(self, text, key):
        with pytest.raises(ConfigError) as exc:
            parse_run_spec(text)
        assert exc.value.key == key

    def test_nesting_limited_to_one_level(self):
        with pytest.raises(ConfigError):
            flatten({"dataset": {"inner": {"x": 1}}})

    def test_integers_are_accepted_for_floats(self):
        assert parse_run_spec('method = "fixmatch"\ntau = 1\n').config.tau == 1.0


class TestEcho:
    def test_round_trip(self):
        cfg = TrainConfig(method="flexmatch", delta=0.95, seed=4).with_value("network.hidden", [16, 8])
        spec = parse_run_spec(dump_run_spec(cfg, [4, 5], "out"))
        assert spec.config == cfg.with_value("seed", 0)
        assert spec.seeds == [4, 5]
        assert spec.output_dir == "out"

    def test_digest_ignores_seed_only(self):
        cfg = TrainConfig()
        assert cfg.digest() == cfg.with_value("seed", 9).digest()
        assert cfg.digest() != cfg.with_value("delta", 0.95).digest()

    def test_with_value_validates(self):
        with pytest.raises(ConfigError):
            TrainConfig().with_value("q", 0.0)
        with pytest.raises(ConfigError):
            TrainConfig().with_value("nope", 1)
