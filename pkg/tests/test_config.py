import pytest

from ghcbc.config import (apply_overrides, config_from_dict, config_to_dict,
                          default_config, load_config)
from ghcbc.errors import ConfigError


class TestProfiles:
    def test_desk_profile_contract(self):
        cfg = default_config("desk")
        assert cfg.vision.image_h == 24 and cfg.vision.image_w == 32
        assert cfg.vision.feat_c == 16
        assert (cfg.vision.feat_h, cfg.vision.feat_w) == (3, 4)
        assert cfg.vision.token_count == 12
        assert cfg.policy.d_model == 32
        assert cfg.policy.action_dim == 4

    def test_paper_profile_contract(self):
        cfg = default_config("paper")
        assert cfg.vision.image_h == 120 and cfg.vision.image_w == 160
        assert cfg.vision.feat_c == 1280
        assert (cfg.vision.feat_h, cfg.vision.feat_w) == (4, 5)
        assert cfg.vision.token_count == 20
        assert cfg.policy.d_model == 512
        assert cfg.policy.chunk_k == 20 and cfg.policy.history_k == 20
        assert cfg.policy.enc_layers == 4 and cfg.policy.dec_layers == 7
        assert cfg.policy.hist_layers == 4 and cfg.policy.n_heads == 8
        assert cfg.policy.gripper_close == 0.6 and cfg.policy.gripper_open == 0.4
        assert cfg.policy.action_dim == 8

    def test_unknown_profile(self):
        with pytest.raises(ConfigError):
            default_config("huge")


class TestOverrides:
    def test_set_typed_values(self):
        cfg = default_config("desk")
        apply_overrides(cfg, ["train.steps=123", "policy.kl_beta=2.5",
                              "runtime.clearing_enabled=false",
                              "world.link_lengths=0.2,0.2,0.1"])
        assert cfg.train.steps == 123
        assert cfg.policy.kl_beta == 2.5
        assert cfg.runtime.clearing_enabled is False
        assert cfg.world.link_lengths == (0.2, 0.2, 0.1)

    def test_unknown_key_rejected_not_ignored(self):
        cfg = default_config("desk")
        with pytest.raises(ConfigError, match="train.stepz"):
            apply_overrides(cfg, ["train.stepz=10"])

    def test_malformed_override(self):
        with pytest.raises(ConfigError):
            apply_overrides(default_config("desk"), ["train.steps"])

    def test_bad_value_type(self):
        with pytest.raises(ConfigError):
            apply_overrides(default_config("desk"), ["train.steps=abc"])


class TestValidation:
    def test_gripper_threshold_order(self):
        cfg = default_config("desk")
        cfg.policy.gripper_open = 0.9
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_d_model_heads(self):
        cfg = default_config("desk")
        cfg.policy.n_heads = 5
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_block_region_within_reach(self):
        cfg = default_config("desk")
        cfg.world.block_region_center = (0.0, 5.0)
        with pytest.raises(ConfigError):
            cfg.validate()


class TestFileLoading:
    def test_ini_roundtrip(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text(
            "[run]\nprofile = desk\n\n"
            "[train]\n# optimizer steps\nsteps = 55\n\n"
            "[policy]\nchunk_k = 6\n"
        )
        cfg = load_config(ini)
        assert cfg.train.steps == 55 and cfg.policy.chunk_k == 6

    def test_explicit_profile_wins(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[run]\nprofile = paper\n")
        assert load_config(ini, profile="desk").profile == "desk"
        assert load_config(ini).profile == "paper"

    def test_unknown_section(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[banana]\nx = 1\n")
        with pytest.raises(ConfigError):
            load_config(ini)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "none.ini")

    def test_dict_roundtrip(self):
        cfg = default_config("desk")
        cfg.train.steps = 999
        clone = config_from_dict(config_to_dict(cfg))
        assert clone.train.steps == 999
        assert clone.world.link_lengths == cfg.world.link_lengths
