import math

import pytest

from netactive.config import (
    ConfigError,
    ExperimentConfig,
    format_config,
    load_categorical_map,
    parse_config,
    validate_config,
)


def write(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestParseConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        config = parse_config(write(tmp_path, ""))
        assert config == ExperimentConfig()

    def test_batch_size_parse(self, tmp_path):
        config = parse_config(write(tmp_path, "batch_size = 4\n"))
        assert config.batch_size == 4

    def test_comments_and_blank_lines(self, tmp_path):
        text = "# full line comment\n\nbatch_size = 8  # trailing comment\n"
        assert parse_config(write(tmp_path, text)).batch_size == 8

    def test_unknown_key_names_line(self, tmp_path):
        with pytest.raises(ConfigError, match="line 2.*'batchsize'"):
            parse_config(write(tmp_path, "iterations = 3\nbatchsize = 4\n"))

    def test_negative_batch_size_names_line(self, tmp_path):
        with pytest.raises(ConfigError, match="line 1.*outside range"):
            parse_config(write(tmp_path, "batch_size = -1\n"))

    def test_malformed_value_names_line(self, tmp_path):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config(write(tmp_path, "iterations = three\n"))

    def test_duplicate_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config(write(tmp_path, "batch_size = 4\nbatch_size = 5\n"))

    def test_missing_equals_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config(write(tmp_path, "batch_size 4\n"))

    def test_csv_source_requires_existing_file(self, tmp_path):
        text = "data_source = csv\ncsv_path = /missing.csv\n"
        with pytest.raises(ConfigError, match="does not exist"):
            parse_config(write(tmp_path, text))

    def test_collection_incompatible_with_csv(self, tmp_path):
        csv = tmp_path / "d.csv"
        csv.write_text("a,tput\n1,2\n")
        text = f"data_source = csv\ncsv_path = {csv}\ncollect_enabled = true\n"
        with pytest.raises(ConfigError, match="twin world"):
            parse_config(write(tmp_path, text))

    def test_unknown_strategy_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown strategy"):
            parse_config(write(tmp_path, "strategies = psychic\n"))

    def test_infinite_budget_allowed(self, tmp_path):
        config = parse_config(write(tmp_path, "budget_total = inf\n"))
        assert math.isinf(config.budget_total)

    def test_fraction_bounds(self, tmp_path):
        with pytest.raises(ConfigError, match="outside range"):
            parse_config(write(tmp_path, "test_fraction = 1.0\n"))


class TestFormatConfig:
    def test_round_trip(self, tmp_path):
        original = ExperimentConfig(batch_size=16, strategies="hybrid", dropout_rate=0.35,
                                    warm_start=False, seeds="3,4")
        path = write(tmp_path, format_config(original), name="echo.cfg")
        assert parse_config(path) == original

    def test_echo_lists_every_key(self):
        text = format_config(ExperimentConfig())
        from dataclasses import fields

        for f in fields(ExperimentConfig):
            assert f"{f.name} = " in text

    def test_default_round_trip(self, tmp_path):
        path = write(tmp_path, format_config(ExperimentConfig()), name="echo.cfg")
        assert parse_config(path) == ExperimentConfig()


class TestCategoricalMap:
    def test_parse(self, tmp_path):
        path = tmp_path / "modes.map"
        path.write_text("walking=0\ndriving=1\n# comment\n")
        assert load_categorical_map(str(path)) == {"walking": 0.0, "driving": 1.0}

    def test_non_integer_rejected(self, tmp_path):
        path = tmp_path / "modes.map"
        path.write_text("walking=fast\n")
        with pytest.raises(ConfigError, match="not an integer"):
            load_categorical_map(str(path))

    def test_empty_rejected(self, tmp_path):
        path = tmp_path / "modes.map"
        path.write_text("\n")
        with pytest.raises(ConfigError, match="empty"):
            load_categorical_map(str(path))


class TestValidateConfig:
    def test_categorical_column_needs_map(self):
        config = ExperimentConfig(categorical_column="mode")
        with pytest.raises(ConfigError, match="categorical_map_path"):
            validate_config(config)

    def test_hidden_sizes_must_be_ints(self):
        config = ExperimentConfig(hidden_sizes="64,potato")
        with pytest.raises(ConfigError, match="comma-separated integers"):
            validate_config(config)
