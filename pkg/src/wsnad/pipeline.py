"""End-to-end experiment stages shared by the CLI, the ablation runner and the tests."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .data import (
    Corpus,
    WindowBatch,
    build_adjacency,
    default_specs,
    grid_coordinates,
    inject_anomalies,
    slide_windows,
    synth_generate,
)
from .detect import DetectionReport, build_report, persistence_predictions, score, select_threshold
from .model import Backbone, ModelConfig, build_backbone, build_predictor
from .numeric import NonFiniteError, RngStream, adamw
from .pretrain import PretrainConfig, PretrainResult, pred_loss, pretrain
from .prompt import FinetuneConfig, PromptSet, finetune, predict
from .spatial import normalize_adjacency

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# data


def synth_corpus(
    n_nodes: int,
    n_modalities: int,
    t: int,
    seed: int,
    k: int = 4,
    anomaly_rate: float = 0.02,
    anomaly_types=("point", "contextual", "collective", "correlation"),
    spec_overrides: dict[str, dict] | None = None,
) -> Corpus:
    graph = build_adjacency(grid_coordinates(n_nodes), k=k)
    clean = synth_generate(n_nodes, n_modalities, t, graph, seed)
    specs = default_specs(anomaly_rate, seed, tuple(anomaly_types), spec_overrides) if anomaly_rate > 0 else []
    injected = inject_anomalies(clean, specs)
    return Corpus(
        injected.series,
        graph,
        injected.labels,
        seed=seed,
        specs=[s.as_dict() for s in specs],
        events=[e.as_dict() for e in injected.events],
    )


@dataclass
class Splits:
    train: WindowBatch
    val: WindowBatch
    test: WindowBatch


def split_windows(
    corpus: Corpus,
    w: int,
    train_stride: int = 1,
    eval_stride: int = 1,
    train_frac: float = 0.6,
    val_frac: float = 0.2,
    epsilon: float = 1e-8,
    stats: str = "window",
) -> Splits:
    """Chronological split on the target step.

    Training windows lie entirely inside the first ``train_frac`` of the series.
    Validation and test windows are assigned by their target step; their inputs
    may reach back into the preceding split.  With ``stats="global"`` every
    window is standardized with per-(node, modality) statistics of the training
    portion instead of its own.
    """
    if not (0 < train_frac < 1 and 0 < val_frac < 1 and train_frac + val_frac < 1):
        raise ValueError("split fractions must be positive and sum to less than 1")
    values = corpus.series.values
    t = values.shape[-1]
    t_train = int(round(train_frac * t))
    t_val = int(round((train_frac + val_frac) * t))
    kw: dict = {"epsilon": epsilon, "stats": stats}
    if stats == "global":
        kw["global_mu"] = values[..., :t_train].mean(axis=-1)
        kw["global_sigma"] = values[..., :t_train].std(axis=-1)
    train = slide_windows(values[..., :t_train], w, train_stride, corpus.labels[..., :t_train], **kw)
    everything = slide_windows(values, w, eval_stride, corpus.labels, **kw)
    tgt = everything.target_steps
    val = everything.subset(np.flatnonzero((tgt >= t_train) & (tgt < t_val)))
    test = everything.subset(np.flatnonzero(tgt >= t_val))
    if len(train) == 0 or len(val) == 0 or len(test) == 0:
        raise ValueError(f"series of length {t} is too short for window {w} with this split")
    return Splits(train, val, test)


# ---------------------------------------------------------------------------
# ablation schemes


@dataclass(frozen=True)
class Scheme:
    name: str
    description: str
    use_msdconv: bool = True
    use_attention: bool = True
    use_vgcn: bool = True
    use_pretrain: bool = True
    use_prompts: bool = True


SCHEMES: dict[str, Scheme] = {
    "full": Scheme("full", "all modules, pretraining and prompts"),
    "scheme1": Scheme("scheme1", "plain SSM: no multi-scale convolution, no cross-modal attention", use_msdconv=False, use_attention=False),
    "scheme2": Scheme("scheme2", "no cross-modal attention", use_attention=False),
    "scheme3": Scheme("scheme3", "no variational graph convolution", use_vgcn=False),
    "scheme4": Scheme("scheme4", "no cross-modal attention and no graph convolution", use_attention=False, use_vgcn=False),
    "scheme5": Scheme("scheme5", "no self-supervised pretraining", use_pretrain=False),
    "scheme6": Scheme("scheme6", "pretrained and frozen, no prompts (head trained instead)", use_prompts=False),
}


def scheme_model_config(base: ModelConfig, scheme: Scheme) -> ModelConfig:
    return replace(
        base,
        use_msdconv=base.use_msdconv and scheme.use_msdconv,
        use_attention=base.use_attention and scheme.use_attention,
        use_vgcn=base.use_vgcn and scheme.use_vgcn,
    )


# ---------------------------------------------------------------------------
# training stages


def train_supervised(
    backbone: Backbone,
    prompts: PromptSet,
    data: WindowBatch,
    a_hat: torch.Tensor,
    config: FinetuneConfig,
    seed: int,
) -> list[dict]:
    """Train every parameter on next-step prediction from random init (no pretraining)."""
    params = list(backbone.encoder.parameters()) + list(backbone.pred_head.parameters())
    if config.use_prompts:
        params += list(prompts.parameters())
    else:
        prompts.requires_grad_(False)
    opt = adamw(params, lr=config.lr, weight_decay=config.weight_decay)
    stream = RngStream(seed, ("supervised",))
    trace = []
    for epoch in range(config.epochs):
        ep = stream.child("epoch", epoch)
        total, n = 0.0, 0
        for b, (x, y, _) in enumerate(data.batches(config.batch_size, ep.child("shuffle"))):
            h = backbone.encoder(x, a_hat, train=True, rng=ep.child("step", b)).z
            loss = pred_loss(backbone.pred_head(prompts(h)), y, config.reduction)
            if not math.isfinite(float(loss.detach())):
                raise NonFiniteError(f"non-finite loss at epoch {epoch}, batch {b}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += float(loss.detach())
            n += 1
        trace.append({"epoch": epoch, "L_pred": total / max(n, 1)})
        log.info("supervised epoch %d L_pred=%.4f", epoch, trace[-1]["L_pred"])
    return trace


@dataclass
class TrainedModel:
    backbone: Backbone
    prompts: PromptSet
    pretrain_trace: list[dict] = field(default_factory=list)
    finetune_trace: list[dict] = field(default_factory=list)
    pretrain_result: PretrainResult | None = None


def train_model(
    splits: Splits,
    adjacency: np.ndarray,
    model_cfg: ModelConfig,
    pretrain_cfg: PretrainConfig,
    finetune_cfg: FinetuneConfig,
    seed: int,
    scheme: Scheme = SCHEMES["full"],
    log_dir: Path | None = None,
) -> TrainedModel:
    cfg = scheme_model_config(model_cfg, scheme)
    backbone = build_backbone(cfg, seed)
    n_nodes = splits.train.windows.shape[1]
    prompts = PromptSet(n_nodes, cfg.d_z)
    a_hat = normalize_adjacency(adjacency)
    ft_cfg = replace(finetune_cfg, use_prompts=scheme.use_prompts, unfreeze_head=finetune_cfg.unfreeze_head or not scheme.use_prompts)
    if not scheme.use_pretrain:
        trace = train_supervised(backbone, prompts, splits.train, a_hat, ft_cfg, seed)
        return TrainedModel(backbone, prompts, [], trace)
    predictor = build_predictor(cfg, seed)
    res = pretrain(
        backbone,
        predictor,
        splits.train,
        adjacency,
        pretrain_cfg,
        seed,
        log_path=None if log_dir is None else log_dir / "pretrain_log.jsonl",
    )
    ft_trace = finetune(
        backbone,
        prompts,
        splits.train,
        a_hat,
        ft_cfg,
        seed,
        log_path=None if log_dir is None else log_dir / "finetune_log.jsonl",
    )
    return TrainedModel(backbone, prompts, res.trace, ft_trace, res)


# ---------------------------------------------------------------------------
# detection


def model_scores(backbone: Backbone, prompts: PromptSet | None, data: WindowBatch, a_hat: torch.Tensor) -> np.ndarray:
    return score(predict(backbone, prompts, data.windows, a_hat), data.targets)


def persistence_scores(data: WindowBatch) -> np.ndarray:
    return score(persistence_predictions(data.windows), data.targets)


def detect_from_scores(
    val_scores: np.ndarray,
    val: WindowBatch,
    test_scores: np.ndarray,
    test: WindowBatch,
    mode: str = "best_f1",
    tau: float | None = None,
    q: float = 0.995,
) -> DetectionReport:
    """Choose ``tau`` on the validation split and report on the test split."""
    chosen = select_threshold(val_scores, val.labels, mode=mode, tau=tau, q=q)
    return build_report(test_scores, chosen, mode, test.labels, test.starts)


def evaluate(
    model: TrainedModel,
    splits: Splits,
    adjacency: np.ndarray,
    mode: str = "best_f1",
    tau: float | None = None,
    q: float = 0.995,
) -> DetectionReport:
    a_hat = normalize_adjacency(adjacency)
    val_s = model_scores(model.backbone, model.prompts, splits.val, a_hat)
    test_s = model_scores(model.backbone, model.prompts, splits.test, a_hat)
    return detect_from_scores(val_s, splits.val, test_s, splits.test, mode, tau, q)


def evaluate_persistence(splits: Splits, mode: str = "best_f1", tau: float | None = None, q: float = 0.995) -> DetectionReport:
    return detect_from_scores(persistence_scores(splits.val), splits.val, persistence_scores(splits.test), splits.test, mode, tau, q)
