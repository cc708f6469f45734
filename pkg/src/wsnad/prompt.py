"""Per-node graph prompts trained against a frozen backbone."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .data.windows import WindowBatch
from .model import Backbone
from .numeric import NonFiniteError, RngStream, adamw
from .pretrain import pred_loss

log = logging.getLogger(__name__)


class PromptSet(nn.Module):
    """Learnable ``P`` of shape ``[N, d_z]``, zero-initialized."""

    def __init__(self, n_nodes: int, d_z: int):
        super().__init__()
        self.P = nn.Parameter(torch.zeros(n_nodes, d_z))

    @property
    def n_nodes(self) -> int:
        return self.P.shape[0]

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return apply_prompt(h, self.P)


def apply_prompt(h: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    """``H*[..., i, t, :] = H[..., i, t, :] + P[i, :]`` (broadcast over steps)."""
    if h.shape[-3] != p.shape[0]:
        raise ValueError(f"prompt set has {p.shape[0]} nodes but embeddings have {h.shape[-3]}")
    if h.shape[-1] != p.shape[1]:
        raise ValueError(f"prompt width {p.shape[1]} does not match embedding width {h.shape[-1]}")
    return h + p[:, None, :]


def freeze(module: nn.Module) -> None:
    for p in module.parameters():
        p.requires_grad_(False)


def trainable_count(modules) -> int:
    return sum(p.numel() for m in modules for p in m.parameters() if p.requires_grad)


@dataclass
class FinetuneConfig:
    epochs: int = 10
    batch_size: int = 16
    lr: float = 0.005
    weight_decay: float = 0.0
    unfreeze_head: bool = False
    use_prompts: bool = True
    reduction: str = "sum"

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@torch.no_grad()
def embed_all(backbone: Backbone, windows: np.ndarray, a_hat: torch.Tensor, chunk: int = 64) -> torch.Tensor:
    """Eval-mode embeddings ``[B, N, W, d_z]`` for every window."""
    out = [backbone.embed(torch.from_numpy(windows[i : i + chunk]), a_hat, train=False) for i in range(0, len(windows), chunk)]
    return torch.cat(out) if out else torch.empty(0)


def finetune(
    backbone: Backbone,
    prompts: PromptSet,
    data: WindowBatch,
    a_hat: torch.Tensor,
    config: FinetuneConfig,
    seed: int,
    log_path: str | Path | None = None,
) -> list[dict]:
    """Train ``P`` (and optionally the prediction head) on next-step prediction.

    The encoder is frozen and runs in eval mode (no latent sampling), so its
    embeddings are computed once and reused across epochs.
    """
    if prompts.n_nodes != data.windows.shape[1]:
        raise ValueError(f"prompt set has {prompts.n_nodes} nodes but the corpus has {data.windows.shape[1]}")
    freeze(backbone)
    modules: list[nn.Module] = []
    if config.use_prompts:
        modules.append(prompts)
    else:
        freeze(prompts)
        with torch.no_grad():
            prompts.P.zero_()
    if config.unfreeze_head:
        backbone.pred_head.requires_grad_(True)
        modules.append(backbone.pred_head)
    trace: list[dict] = []
    if config.epochs == 0 or not modules:
        return trace
    params = [p for m in modules for p in m.parameters()]
    opt = adamw(params, lr=config.lr, weight_decay=config.weight_decay)
    h_all = embed_all(backbone, data.windows, a_hat)
    y_all = torch.from_numpy(data.targets)
    stream = RngStream(seed, ("finetune",))
    log_file = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            order = stream.child("epoch", epoch).generator.permutation(len(data))
            total, n = 0.0, 0
            for b, i in enumerate(range(0, len(order), config.batch_size)):
                idx = torch.from_numpy(order[i : i + config.batch_size])
                loss = pred_loss(backbone.pred_head(prompts(h_all[idx])), y_all[idx], config.reduction)
                if not math.isfinite(float(loss.detach())):
                    raise NonFiniteError(f"non-finite fine-tuning loss at epoch {epoch}, batch {b}")
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                total += float(loss.detach())
                n += 1
            rec = {"epoch": epoch, "L_pred": total / max(n, 1)}
            trace.append(rec)
            log.info("finetune epoch %d L_pred=%.4f", epoch, rec["L_pred"])
            if log_file is not None:
                log_file.write(json.dumps({**rec, "wall_ms": (time.perf_counter() - t0) * 1000.0}) + "\n")
    finally:
        if log_file is not None:
            log_file.close()
    return trace


@torch.no_grad()
def predict(backbone: Backbone, prompts: PromptSet | None, windows: np.ndarray, a_hat: torch.Tensor, chunk: int = 64) -> np.ndarray:
    """Eval-mode next-step predictions ``[B, N, M]`` in standardized scale."""
    outs = []
    for i in range(0, len(windows), chunk):
        h = backbone.embed(torch.from_numpy(windows[i : i + chunk]), a_hat, train=False)
        if prompts is not None:
            h = prompts(h)
        outs.append(backbone.pred_head(h))
    if not outs:
        return np.zeros((0,) + windows.shape[1:3])
    return torch.cat(outs).numpy()
