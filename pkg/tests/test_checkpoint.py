from __future__ import annotations

import json

import pytest
import torch

from wsnad.checkpoint import (
    CheckpointError,
    decode_tensor,
    encode_tensor,
    load_checkpoint,
    load_into,
    module_tensors,
    resave,
    save_checkpoint,
    state_hash,
)
from wsnad.model import build_backbone
from wsnad.numeric import adamw

from .conftest import rand


def test_tensor_encoding_is_exact():
    t = rand(3, 4) * 1e300
    t[0, 0] = -0.0
    back = decode_tensor(encode_tensor(t))
    assert back.shape == t.shape
    assert back.numpy().tobytes() == t.numpy().tobytes()


def test_roundtrip_bytes_with_optimizer_and_rng(tmp_path, toy_backbone):
    opt = adamw(toy_backbone.parameters())
    for p in toy_backbone.parameters():
        p.grad = torch.ones_like(p)
    opt.step()
    path = tmp_path / "a.json"
    save_checkpoint(path, module_tensors(toy_backbone), "backbone", {"note": "x", "ids": [1, 2]}, opt.state_dict(), {"seed": 3})
    resave(path, tmp_path / "b.json")
    resave(tmp_path / "b.json", tmp_path / "c.json")
    assert (tmp_path / "b.json").read_bytes() == (tmp_path / "c.json").read_bytes()
    ck = load_checkpoint(path, kind="backbone")
    clone = build_backbone(toy_backbone.cfg, 42)
    load_into(clone, ck["tensors"])
    assert state_hash(clone) == state_hash(toy_backbone)
    assert ck["meta"] == {"note": "x", "ids": [1, 2]}
    assert ck["rng"] == {"seed": 3}
    assert ck["optimizer"] is not None


def test_load_errors(tmp_path, toy_backbone):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    bad.write_text(json.dumps({"format": "other"}))
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    good = tmp_path / "p.json"
    save_checkpoint(good, {"P": torch.zeros(2, 2)}, "prompts")
    with pytest.raises(CheckpointError):
        load_checkpoint(good, kind="backbone")
    with pytest.raises(CheckpointError):
        load_into(toy_backbone, {"P": torch.zeros(2, 2)})
