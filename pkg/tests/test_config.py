"""The key = value config dialect."""

import pytest

from dualalign.config import (Config, KEY_TO_FIELD, load_config, parse_config,
                              serialize_config)
from dualalign.errors import ConfigError


class TestParse:
    def test_empty_config_is_all_defaults(self):
        assert parse_config("") == Config()

    def test_comments_and_blanks(self):
        cfg = parse_config("# full-line comment\n\nlr = 0.5  # trailing\n")
        assert cfg.lr == 0.5

    def test_unknown_key_reports_line(self):
        with pytest.raises(ConfigError, match=r":3: unknown key 'learning_rate'"):
            parse_config("lr = 0.1\n\nlearning_rate = 5\n")

    def test_bad_value_reports_key(self):
        with pytest.raises(ConfigError, match="iterations"):
            parse_config("iterations = soon\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config("lr = 0.1\nlr = 0.2\n")

    def test_bool_spelling(self):
        assert parse_config("stop_grad_target = true\n").stop_grad_target is True
        with pytest.raises(ConfigError):
            parse_config("stop_grad_target = yes\n")

    def test_validation_applies(self):
        with pytest.raises(ConfigError, match="mode"):
            parse_config("mode = freestyle\n")
        with pytest.raises(ConfigError, match="multiple of 8"):
            parse_config("height = 65\n")

    def test_every_key_has_default_and_help(self):
        from dualalign.config import KEY_HELP
        assert set(KEY_HELP) == set(KEY_TO_FIELD)


class TestRoundTrip:
    def test_parse_serialize_parse_fixed_point(self):
        text = "lambda = 0.25\nk = 4\nmode = two_stage\nshift_gamma = 1.1\n"
        once = parse_config(text)
        again = parse_config(serialize_config(once))
        assert once == again

    def test_serialize_parse_serialize_fixed_point(self):
        cfg = Config(lam=0.3, iterations=17, mode="source_only")
        text = serialize_config(cfg)
        assert serialize_config(parse_config(text)) == text

    def test_serialization_covers_every_key(self):
        text = serialize_config(Config())
        for key in KEY_TO_FIELD:
            assert any(line.startswith(f"{key} = ") for line in text.splitlines())


class TestLoad:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.cfg")

    def test_none_gives_defaults(self):
        assert load_config(None) == Config()

    def test_seed_override_fans_out(self):
        cfg = Config()
        cfg.override_seeds(42)
        assert (cfg.benchmark_seed, cfg.seed_data, cfg.seed_init,
                cfg.seed_sampling) == (42, 42, 43, 44)
