"""JSON checkpoint container for named float64 tensors.

Layout (version 1)::

    {
      "format": "wsnad-checkpoint", "version": 1, "kind": "backbone" | "prompts" | ...,
      "meta": {...},
      "tensors": {name: {"shape": [...], "dtype": "float64", "data": <base64 little-endian>}},
      "optimizer": {"param_groups": [...], "state": {index: {name: tensor-or-number}}} | null,
      "rng": {...} | null
    }

Keys are sorted and tensors are stored as raw bytes, so save -> load -> save
reproduces the file byte for byte.
"""

from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .numeric import DTYPE

FORMAT = "wsnad-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_tensor(t: torch.Tensor) -> dict:
    arr = t.detach().cpu().to(DTYPE).contiguous().numpy().astype("<f8", copy=False)
    return {"shape": list(arr.shape), "dtype": "float64", "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_tensor(obj: dict) -> torch.Tensor:
    if obj.get("dtype") != "float64":
        raise CheckpointError(f"unsupported dtype {obj.get('dtype')!r}")
    arr = np.frombuffer(base64.b64decode(obj["data"]), dtype="<f8").reshape(obj["shape"])
    return torch.from_numpy(arr.astype(np.float64))


def _jsonable(v: Any) -> Any:
    if isinstance(v, torch.Tensor):
        return {"__tensor__": encode_tensor(v)}
    if isinstance(v, np.ndarray):
        return {"__array__": v.tolist(), "dtype": str(v.dtype)}
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _restore(v: Any) -> Any:
    if isinstance(v, dict):
        if "__tensor__" in v:
            return decode_tensor(v["__tensor__"])
        if "__array__" in v:
            return np.asarray(v["__array__"], dtype=v["dtype"])
        return {k: _restore(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_restore(x) for x in v]
    return v


def dumps(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def save_checkpoint(
    path: str | Path,
    tensors: dict[str, torch.Tensor],
    kind: str,
    meta: dict | None = None,
    optimizer_state: dict | None = None,
    rng_state: dict | None = None,
) -> None:
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "meta": _jsonable(meta or {}),
        "tensors": {k: encode_tensor(v) for k, v in tensors.items()},
        "optimizer": _jsonable(optimizer_state) if optimizer_state is not None else None,
        "rng": _jsonable(rng_state) if rng_state is not None else None,
    }
    Path(path).write_text(dumps(payload), encoding="utf-8")


def load_checkpoint(path: str | Path, kind: str | None = None) -> dict:
    """Return ``{"kind", "meta", "tensors", "optimizer", "rng"}`` with tensors decoded."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{p} is not a valid checkpoint: {e}") from e
    if raw.get("format") != FORMAT:
        raise CheckpointError(f"{p} is not a {FORMAT} file")
    if raw.get("version") != VERSION:
        raise CheckpointError(f"{p} has unsupported version {raw.get('version')}")
    if kind is not None and raw.get("kind") != kind:
        raise CheckpointError(f"{p} holds a {raw.get('kind')!r} checkpoint, expected {kind!r}")
    return {
        "kind": raw["kind"],
        "meta": _restore(raw["meta"]),
        "tensors": {k: decode_tensor(v) for k, v in raw["tensors"].items()},
        "optimizer": _restore(raw["optimizer"]) if raw["optimizer"] is not None else None,
        "rng": _restore(raw["rng"]) if raw["rng"] is not None else None,
    }


def resave(src: str | Path, dst: str | Path) -> None:
    ck = load_checkpoint(src)
    save_checkpoint(dst, ck["tensors"], ck["kind"], ck["meta"], ck["optimizer"], ck["rng"])


def state_hash(module: torch.nn.Module) -> str:
    """SHA-256 over parameter names and raw bytes."""
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def module_tensors(module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return dict(sorted(module.state_dict().items()))


def load_into(module: torch.nn.Module, tensors: dict[str, torch.Tensor]) -> None:
    expected = module.state_dict()
    missing = sorted(set(expected) - set(tensors))
    extra = sorted(set(tensors) - set(expected))
    if missing or extra:
        raise CheckpointError(f"checkpoint does not match model (missing {missing}, unexpected {extra})")
    for k, v in tensors.items():
        if tuple(v.shape) != tuple(expected[k].shape):
            raise CheckpointError(f"tensor {k} has shape {tuple(v.shape)}, model expects {tuple(expected[k].shape)}")
    module.load_state_dict(tensors)
