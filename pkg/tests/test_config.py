import pytest

from src.states.config import CONFIG_DIR, ClearLensConfig, config_from_string, load_config
from src.utils.errors import ConfigError
from tests.conftest import TINY_INI


class TestPresets:
    @pytest.mark.parametrize("name", ["desk", "full"])
    def test_preset_by_name(self, name):
        config = load_config(name)
        assert isinstance(config, ClearLensConfig)
        assert config.train.neighbors % 2 == 0

    def test_preset_by_path(self):
        assert load_config(CONFIG_DIR / "desk.ini") == load_config("desk")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.ini")


class TestParsing:
    def test_lists_and_scalars(self, tiny_config):
        assert tiny_config.synth.sizes == [32]
        assert tiny_config.model.attention_channels == [2, 2, 2]
        assert tiny_config.model.dilations == [2]
        assert tiny_config.train.neighbors == 2

    def test_omitted_keys_take_defaults(self):
        config = config_from_string("[train]\nlr = 0.01\n")
        assert config.train.lr == 0.01
        assert config.train.gamma == 0.8
        assert config.flow.block == 8

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "tiny.ini"
        path.write_text(TINY_INI)
        assert load_config(path) == config_from_string(TINY_INI)


class TestValidation:
    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="lerning_rate"):
            config_from_string("[train]\nlerning_rate = 0.1\n")

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="unknown section"):
            config_from_string("[optimizer]\nlr = 0.1\n")

    def test_odd_neighbour_count(self):
        with pytest.raises(ConfigError, match="even"):
            config_from_string("[train]\nneighbors = 3\n")

    def test_crop_not_stride_multiple(self):
        with pytest.raises(ConfigError, match="multiple of 8"):
            config_from_string("[train]\ncrop = 20\n")

    def test_crop_larger_than_frames(self):
        with pytest.raises(ConfigError, match="exceeds the smallest frame size"):
            config_from_string("[synth]\nsizes = 32\n[train]\ncrop = 48\n")

    def test_channel_levels(self):
        with pytest.raises(ConfigError):
            config_from_string("[model]\nattention_channels = 4, 4\n")

    def test_malformed_ini(self):
        with pytest.raises(ConfigError):
            config_from_string("lr = 0.1\n")


class TestSeedOverride:
    def test_overrides_both_seeds(self, tiny_config):
        seeded = tiny_config.with_seed(42)
        assert seeded.train.seed == seeded.synth.seed == 42
        assert seeded.model == tiny_config.model

    def test_none_keeps_config(self, tiny_config):
        assert tiny_config.with_seed(None) is tiny_config
