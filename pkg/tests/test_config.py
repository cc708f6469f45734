from __future__ import annotations

import pytest

from wsnad.config import ConfigError, RunConfig, apply_overrides, dump_yaml, field_paths, load_config, resolve


def test_defaults_and_unknown_keys(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 3\nwindow:\n  w: 20\n")
    cfg = load_config(p)
    assert cfg.seed == 3 and cfg.window.w == 20 and cfg.pretrain.epochs == 30
    p.write_text("window:\n  width: 20\n")
    with pytest.raises(ConfigError, match="width"):
        load_config(p)
    p.write_text("window:\n  w: twenty\n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "none.yaml")


def test_precedence_file_env_flags():
    cfg = RunConfig(output_dir="from_file")
    assert resolve(cfg, {}, env={}).output_dir == "from_file"
    assert resolve(cfg, {}, env={"OUTPUT_DIR": "from_env"}).output_dir == "from_env"
    assert resolve(cfg, {"output_dir": "from_flag"}, env={"OUTPUT_DIR": "from_env"}).output_dir == "from_flag"


def test_overrides_and_validation():
    cfg = apply_overrides(RunConfig(), {"pretrain.augment.edge_drop_ratio": 0.2, "model.dilations": [1, 3]})
    assert cfg.pretrain.augment.edge_drop_ratio == 0.2 and cfg.model.dilations == (1, 3)
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), {"model.nope": 1})
    with pytest.raises(ConfigError):
        resolve(RunConfig(), {"detect.mode": "fixed"}, env={})
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), {"pretrain.augment.temporal_mask_ratio": 1.5})


def test_dump_roundtrip(tmp_path):
    cfg = apply_overrides(RunConfig(), {"seed": 9, "ablate.schemes": ["full"]})
    p = tmp_path / "r.yaml"
    p.write_text(dump_yaml(cfg))
    assert load_config(p) == cfg
    assert "pretrain.augment.mask_segment_len" in field_paths()
