"""Self-supervised pretraining: BYOL-style alignment plus prediction and reconstruction."""

from __future__ import annotations

import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data.windows import WindowBatch
from .model import Backbone, Predictor, TargetNetwork
from .numeric import NonFiniteError, RngStream, adamw, cosine_similarity
from .spatial import normalize_adjacency

log = logging.getLogger(__name__)


@dataclass
class AugmentConfig:
    temporal_mask_ratio: float = 0.15
    mask_segment_len: int = 10
    edge_drop_ratio: float = 0.10
    edge_add_ratio: float = 0.05

    def __post_init__(self) -> None:
        for name in ("temporal_mask_ratio", "edge_drop_ratio", "edge_add_ratio"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {v}")
        if self.mask_segment_len < 1:
            raise ValueError("mask_segment_len must be at least 1")


@dataclass
class AugmentRecord:
    mask: np.ndarray  # bool, same shape as the window tensor
    dropped: list[tuple[int, int]] = field(default_factory=list)
    added: list[tuple[int, int]] = field(default_factory=list)


def _segment_mask(n_rows: int, w: int, ratio: float, seg_len: int, rng: np.random.Generator) -> np.ndarray:
    """Per row, contiguous segments covering exactly ``round(ratio * w)`` steps."""
    mask = np.zeros((n_rows, w), dtype=bool)
    target = int(round(ratio * w))
    if target == 0:
        return mask
    for r in range(n_rows):
        row = mask[r]
        covered = 0
        # each segment is shortened to the remaining budget so coverage lands on target
        for _ in range(4 * w):
            length = min(seg_len, target - covered)
            start = int(rng.integers(0, w - length + 1))
            row[start : start + length] = True
            covered = int(row.sum())
            if covered >= target:
                break
    return mask


def perturb_edges(
    adjacency: np.ndarray, drop_ratio: float, add_ratio: float, rng: np.random.Generator
) -> tuple[np.ndarray, list[tuple[int, int]], list[tuple[int, int]]]:
    """Drop ``drop_ratio`` of the edges and add ``add_ratio * |E|`` non-edges, symmetrically."""
    a = np.asarray(adjacency)
    n = a.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    present = a[iu, ju] > 0
    edges = np.flatnonzero(present)
    holes = np.flatnonzero(~present)
    n_drop = int(round(drop_ratio * len(edges)))
    n_add = min(int(round(add_ratio * len(edges))), len(holes))
    drop = np.sort(rng.choice(edges, size=n_drop, replace=False)) if n_drop else np.empty(0, dtype=int)
    add = np.sort(rng.choice(holes, size=n_add, replace=False)) if n_add else np.empty(0, dtype=int)
    out = a.astype(np.float64).copy()
    for k in drop:
        out[iu[k], ju[k]] = out[ju[k], iu[k]] = 0.0
    for k in add:
        out[iu[k], ju[k]] = out[ju[k], iu[k]] = 1.0
    return (
        out,
        [(int(iu[k]), int(ju[k])) for k in drop],
        [(int(iu[k]), int(ju[k])) for k in add],
    )


def augment(
    x: np.ndarray | torch.Tensor,
    adjacency: np.ndarray,
    config: AugmentConfig,
    rng: RngStream,
) -> tuple[torch.Tensor, np.ndarray, AugmentRecord]:
    """Temporal masking of ``x`` (``[..., N, M, W]``) and edge perturbation of ``adjacency``."""
    xt = torch.as_tensor(x)
    w = xt.shape[-1]
    rows = int(np.prod(xt.shape[:-1]))
    g = rng.generator
    mask = _segment_mask(rows, w, config.temporal_mask_ratio, config.mask_segment_len, g).reshape(xt.shape)
    x_aug = xt.masked_fill(torch.from_numpy(mask), 0.0)
    a_aug, dropped, added = perturb_edges(adjacency, config.edge_drop_ratio, config.edge_add_ratio, g)
    return x_aug, a_aug, AugmentRecord(mask, dropped, added)


@torch.no_grad()
def ema_update(target: torch.nn.Module, online: torch.nn.Module, m: float = 0.99) -> None:
    """``xi <- m * xi + (1 - m) * theta`` for every paired parameter."""
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"EMA momentum must be in [0, 1], got {m}")
    t_params = list(target.parameters())
    o_params = list(online.parameters())
    if len(t_params) != len(o_params):
        raise ValueError("target and online networks differ in structure")
    for xi, theta in zip(t_params, o_params):
        if xi.shape != theta.shape:
            raise ValueError(f"shape mismatch {tuple(xi.shape)} vs {tuple(theta.shape)}")
        xi.mul_(m).add_(theta, alpha=1.0 - m)


def byol_loss(q: torch.Tensor, z_target: torch.Tensor) -> torch.Tensor:
    """Mean over nodes (and batch) of ``2 - 2 cos(q_i, z'_i)``; ``z_target`` is detached."""
    if q.shape != z_target.shape:
        raise ValueError(f"shape mismatch {tuple(q.shape)} vs {tuple(z_target.shape)}")
    cos, degenerate = cosine_similarity(q, z_target.detach())
    if bool(degenerate.any()):
        warnings.warn("zero-norm embedding in contrastive loss; cosine treated as 0", RuntimeWarning, stacklevel=2)
    return (2.0 - 2.0 * cos.clamp(-1.0, 1.0)).mean()


def _check_shapes(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def squared_error_loss(pred: torch.Tensor, target: torch.Tensor, sample_dims: int, reduction: str = "sum") -> torch.Tensor:
    """Squared error summed over the trailing ``sample_dims`` axes, averaged over leading ones.

    ``reduction="mean"`` averages over the cells as well.
    """
    _check_shapes(pred, target)
    sq = (pred - target) ** 2
    if reduction == "mean":
        return sq.mean()
    if reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    per_sample = sq.sum(dim=tuple(range(-sample_dims, 0))) if sample_dims else sq
    return per_sample.mean() if per_sample.ndim else per_sample


def pred_loss(pred: torch.Tensor, target: torch.Tensor, reduction: str = "sum") -> torch.Tensor:
    """``sum_{i,j} (Y_hat - Y)^2`` per sample (``[..., N, M]``)."""
    return squared_error_loss(pred, target, 2, reduction)


def recon_loss(recon: torch.Tensor, x: torch.Tensor, reduction: str = "sum") -> torch.Tensor:
    """``sum_{i,j,t} (X_hat - X)^2`` per sample (``[..., N, M, W]``)."""
    return squared_error_loss(recon, x, 3, reduction)


@dataclass
class PretrainLosses:
    L: torch.Tensor
    L_cont: torch.Tensor
    L_pred: torch.Tensor
    L_recon: torch.Tensor

    def floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("L", "L_cont", "L_pred", "L_recon")}


def joint_loss(
    backbone: Backbone,
    predictor: Predictor,
    target: TargetNetwork,
    x: torch.Tensor,
    y: torch.Tensor,
    a_hat: torch.Tensor,
    x_aug: torch.Tensor,
    a_hat_aug: torch.Tensor,
    rng: RngStream,
    reduction: str = "sum",
    eps: torch.Tensor | None = None,
    eps_target: torch.Tensor | None = None,
) -> PretrainLosses:
    """Online branch on the clean graph, target branch on the augmented one."""
    h = backbone.encoder(x, a_hat, train=True, rng=rng.child("online"), eps=eps).z
    q = predictor(backbone.projector(h))
    with torch.no_grad():
        z_target = target.projector(target.encoder(x_aug, a_hat_aug, train=True, rng=rng.child("target"), eps=eps_target).z)
    l_cont = byol_loss(q, z_target)
    l_pred = pred_loss(backbone.pred_head(h), y, reduction)
    l_recon = recon_loss(backbone.recon_head(h), x, reduction)
    return PretrainLosses(l_cont + l_pred + l_recon, l_cont, l_pred, l_recon)


@dataclass
class PretrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 0.005
    weight_decay: float = 0.01
    momentum: float = 0.99
    reduction: str = "sum"
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self) -> None:
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig(**self.augment)
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class PretrainResult:
    trace: list[dict]
    optimizer: torch.optim.Optimizer | None
    target: TargetNetwork


def _epoch_record(epoch: int, sums: dict[str, float], n: int) -> dict:
    return {"epoch": epoch, **{k: sums[k] / max(n, 1) for k in ("L", "L_cont", "L_pred", "L_recon")}}


def pretrain(
    backbone: Backbone,
    predictor: Predictor,
    data: WindowBatch,
    adjacency: np.ndarray,
    config: PretrainConfig,
    seed: int,
    log_path: str | Path | None = None,
) -> PretrainResult:
    """Jointly minimize ``L_cont + L_pred + L_recon`` over ``epochs`` passes of ``data``.

    The returned trace holds one record per epoch with batch-averaged losses;
    it contains no timing so that reruns compare byte-for-byte.  The JSON-lines
    run log at ``log_path`` adds ``wall_ms``.
    """
    target = TargetNetwork.from_backbone(backbone)
    a_hat = normalize_adjacency(adjacency)
    stream = RngStream(seed, ("pretrain",))
    trace: list[dict] = []
    if config.epochs == 0:
        return PretrainResult(trace, None, target)
    online = torch.nn.ModuleList([backbone.encoder, backbone.projector])
    params = list(backbone.parameters()) + list(predictor.parameters())
    opt = adamw(params, lr=config.lr, weight_decay=config.weight_decay)
    log_file = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        step = 0
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            ep = stream.child("epoch", epoch)
            sums = dict.fromkeys(("L", "L_cont", "L_pred", "L_recon"), 0.0)
            n_batches = 0
            for b, (x, y, _) in enumerate(data.batches(config.batch_size, ep.child("shuffle"))):
                srng = ep.child("step", b)
                x_aug, a_aug, _ = augment(x, adjacency, config.augment, srng.child("augment"))
                losses = joint_loss(
                    backbone, predictor, target, x, y, a_hat, x_aug, normalize_adjacency(a_aug), srng, config.reduction
                )
                if not math.isfinite(float(losses.L.detach())):
                    raise NonFiniteError(f"non-finite pretraining loss at epoch {epoch}, batch {b}")
                opt.zero_grad(set_to_none=True)
                losses.L.backward()
                opt.step()
                ema_update(target, online, config.momentum)
                for k, v in losses.floats().items():
                    sums[k] += v
                n_batches += 1
                step += 1
            rec = _epoch_record(epoch, sums, n_batches)
            trace.append(rec)
            wall_ms = (time.perf_counter() - t0) * 1000.0
            log.info("pretrain epoch %d L=%.4f (cont %.4f pred %.4f recon %.4f)", epoch, rec["L"], rec["L_cont"], rec["L_pred"], rec["L_recon"])
            if log_file is not None:
                log_file.write(json.dumps({**rec, "wall_ms": wall_ms}) + "\n")
                log_file.flush()
    finally:
        if log_file is not None:
            log_file.close()
    return PretrainResult(trace, opt, target)
