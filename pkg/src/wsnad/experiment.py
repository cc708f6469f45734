"""Config-driven stages behind the CLI subcommands.

Each stage reads its inputs from the resolved :class:`RunConfig`, writes its
artifacts into ``out`` and returns a mapping of artifact names to file names
for ``run_summary.json``.  No stage writes wall-clock data except the
JSON-lines training logs, so reports and loss traces are byte-reproducible.
"""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, load_into, module_tensors, save_checkpoint
from .config import RunConfig, to_dict
from .data import Corpus, load_corpus, parse_ibrl, save_corpus
from .data.inject import AnomalySpec, default_specs, inject_anomalies
from .detect import DetectionReport, build_report, select_threshold, write_metrics_json, write_scores_csv
from .model import Backbone, ModelConfig, build_backbone
from .numeric import grad_check
from .pipeline import (
    SCHEMES,
    Splits,
    evaluate,
    evaluate_persistence,
    model_scores,
    split_windows,
    synth_corpus,
    train_model,
)
from .pretrain import PretrainResult
from .prompt import PromptSet, finetune, trainable_count
from .spatial import normalize_adjacency

log = logging.getLogger(__name__)


class MissingArtifactError(FileNotFoundError):
    """An input produced by an earlier stage is absent."""


class NodeMismatchError(ValueError):
    """Checkpoint, prompts and corpus disagree on the node set."""


def write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# data


def _specs(cfg: RunConfig, seed: int) -> list[AnomalySpec]:
    if cfg.data.anomaly_rate <= 0:
        return []
    return default_specs(cfg.data.anomaly_rate, seed, tuple(cfg.data.anomaly_types), cfg.data.anomaly_overrides)


def make_synth_corpus(cfg: RunConfig) -> Corpus:
    d = cfg.data
    return synth_corpus(
        d.n_nodes, d.n_modalities, d.t, cfg.seed, cfg.graph.k, d.anomaly_rate, tuple(d.anomaly_types), d.anomaly_overrides
    )


def ingest_corpus(cfg: RunConfig) -> tuple[Corpus, dict]:
    d = cfg.data
    if not d.path:
        raise MissingArtifactError("data.path must name an IBRL readings file")
    readings = Path(d.path)
    if not readings.is_file():
        raise MissingArtifactError(f"IBRL readings file not found: {readings}")
    coords = None
    if d.coordinates:
        cp = Path(d.coordinates)
        if not cp.is_file():
            raise MissingArtifactError(f"coordinates file not found: {cp}")
        coords = cp.read_text(encoding="utf-8")
    with readings.open(encoding="utf-8") as fh:
        parsed = parse_ibrl(fh, coords, k=cfg.graph.k, ffill_limit=d.ffill_limit, max_missing=d.max_missing)
    labels = np.zeros(parsed.series.shape, dtype=np.int8)
    return Corpus(parsed.series, parsed.graph, labels, seed=cfg.seed), to_dict(parsed.report)


def inject_into(corpus: Corpus, cfg: RunConfig) -> Corpus:
    specs = _specs(cfg, cfg.seed)
    inj = inject_anomalies(corpus.series, specs)
    labels = np.maximum(corpus.labels, inj.labels)
    return Corpus(
        inj.series,
        corpus.graph,
        labels,
        seed=cfg.seed,
        specs=list(corpus.specs) + [s.as_dict() for s in specs],
        events=list(corpus.events) + [e.as_dict() for e in inj.events],
        extra=dict(corpus.extra),
    )


def load_data(cfg: RunConfig) -> Corpus:
    """The corpus a training/detection stage works on."""
    if cfg.artifacts.corpus:
        return _load_corpus_dir(cfg.artifacts.corpus)
    if cfg.data.source == "corpus":
        if not cfg.data.path:
            raise MissingArtifactError("data.source=corpus needs data.path (a corpus directory)")
        return _load_corpus_dir(cfg.data.path)
    if cfg.data.source == "ibrl":
        corpus, _ = ingest_corpus(cfg)
        return inject_into(corpus, cfg) if cfg.data.anomaly_rate > 0 else corpus
    return make_synth_corpus(cfg)


def _load_corpus_dir(path: str) -> Corpus:
    p = Path(path)
    if not (p / "manifest.json").is_file():
        raise MissingArtifactError(f"corpus not found: {p} has no manifest.json")
    return load_corpus(p)


def make_splits(cfg: RunConfig, corpus: Corpus) -> Splits:
    w = cfg.window
    return split_windows(corpus, w.w, w.train_stride, w.stride, w.train_frac, w.val_frac, w.epsilon, w.stats)


def model_config(cfg: RunConfig, corpus: Corpus) -> ModelConfig:
    return replace(cfg.model, n_modalities=corpus.series.n_modalities)


# ---------------------------------------------------------------------------
# checkpoints


def _backbone_meta(cfg: ModelConfig, corpus: Corpus) -> dict:
    return {"model": cfg.as_dict(), "node_ids": [str(i) for i in corpus.series.node_ids]}


def save_backbone(path: Path, backbone: Backbone, corpus: Corpus, result: PretrainResult | None = None) -> None:
    opt_state = None
    if result is not None and result.optimizer is not None:
        opt_state = result.optimizer.state_dict()
    save_checkpoint(path, module_tensors(backbone), "backbone", _backbone_meta(backbone.cfg, corpus), opt_state)


def load_backbone(path: str | Path) -> tuple[Backbone, dict]:
    p = Path(path)
    if not p.is_file():
        raise MissingArtifactError(f"backbone checkpoint not found: {p} (run `pretrain` first)")
    ck = load_checkpoint(p, kind="backbone")
    mc = dict(ck["meta"]["model"])
    mc["dilations"] = tuple(mc["dilations"])
    backbone = Backbone(ModelConfig(**mc))
    load_into(backbone, ck["tensors"])
    return backbone, ck["meta"]


def save_prompts(path: Path, prompts: PromptSet, corpus: Corpus) -> None:
    meta = {"node_ids": [str(i) for i in corpus.series.node_ids], "d_z": int(prompts.P.shape[1])}
    save_checkpoint(path, {"P": prompts.P}, "prompts", meta)


def load_prompts(path: str | Path) -> PromptSet:
    p = Path(path)
    if not p.is_file():
        raise MissingArtifactError(f"prompt checkpoint not found: {p} (run `finetune` first)")
    ck = load_checkpoint(p, kind="prompts")
    P = ck["tensors"]["P"]
    prompts = PromptSet(P.shape[0], P.shape[1])
    with torch.no_grad():
        prompts.P.copy_(P)
    prompts.meta = ck["meta"]
    return prompts


def _check_nodes(what: str, node_ids: list[str], corpus: Corpus) -> None:
    have = [str(i) for i in corpus.series.node_ids]
    if list(node_ids) != have:
        raise NodeMismatchError(f"{what} was trained on {len(node_ids)} nodes {node_ids[:5]}..., corpus has {len(have)} nodes {have[:5]}...")


def _artifact(cfg: RunConfig, out: Path, key: str, default_name: str) -> Path:
    given = getattr(cfg.artifacts, key)
    return Path(given) if given else out / default_name


# ---------------------------------------------------------------------------
# stages


def stage_synth(cfg: RunConfig, out: Path) -> dict:
    corpus = make_synth_corpus(cfg)
    save_corpus(corpus, out / "corpus")
    return {"corpus": "corpus"}


def stage_inject(cfg: RunConfig, out: Path) -> dict:
    src = cfg.artifacts.corpus or cfg.data.path
    if not src:
        raise MissingArtifactError("inject needs an input corpus (artifacts.corpus or data.path)")
    corpus = inject_into(_load_corpus_dir(src), cfg)
    save_corpus(corpus, out / "corpus")
    return {"corpus": "corpus"}


def stage_ingest(cfg: RunConfig, out: Path) -> dict:
    corpus, report = ingest_corpus(cfg)
    save_corpus(corpus, out / "corpus")
    write_json(out / "ingest_report.json", report)
    return {"corpus": "corpus", "ingest_report": "ingest_report.json"}


def stage_pretrain(cfg: RunConfig, out: Path) -> dict:
    from .model import build_predictor
    from .pretrain import pretrain

    corpus = load_data(cfg)
    splits = make_splits(cfg, corpus)
    mc = model_config(cfg, corpus)
    backbone = build_backbone(mc, cfg.seed)
    predictor = build_predictor(mc, cfg.seed)
    res = pretrain(backbone, predictor, splits.train, corpus.graph.adjacency, cfg.pretrain, cfg.seed, out / "pretrain_log.jsonl")
    save_backbone(out / "backbone.json", backbone, corpus, res)
    write_json(out / "loss_trace.json", {"pretrain": res.trace})
    return {"checkpoint": "backbone.json", "loss_trace": "loss_trace.json", "log": "pretrain_log.jsonl"}


def stage_finetune(cfg: RunConfig, out: Path) -> dict:
    corpus = load_data(cfg)
    backbone, meta = load_backbone(_artifact(cfg, out, "checkpoint", "backbone.json"))
    _check_nodes("backbone checkpoint", meta["node_ids"], corpus)
    splits = make_splits(cfg, corpus)
    prompts = PromptSet(corpus.series.n_nodes, backbone.cfg.d_z)
    a_hat = normalize_adjacency(corpus.graph.adjacency)
    trace = finetune(backbone, prompts, splits.train, a_hat, cfg.finetune, cfg.seed, out / "finetune_log.jsonl")
    n_trainable = trainable_count([prompts, backbone])
    save_prompts(out / "prompts.json", prompts, corpus)
    write_json(out / "finetune_trace.json", {"finetune": trace, "trainable_parameters": n_trainable})
    return {"prompts": "prompts.json", "loss_trace": "finetune_trace.json", "log": "finetune_log.jsonl"}


def _write_report(out: Path, name: str, report: DetectionReport, corpus: Corpus, extra: dict | None = None) -> None:
    write_scores_csv(out / f"{name}.csv", report, [str(i) for i in corpus.series.node_ids], corpus.series.modality_names)
    write_metrics_json(out / f"{name.replace('scores', 'metrics')}.json", report, extra)


def stage_detect(cfg: RunConfig, out: Path) -> dict:
    corpus = load_data(cfg)
    backbone, meta = load_backbone(_artifact(cfg, out, "checkpoint", "backbone.json"))
    _check_nodes("backbone checkpoint", meta["node_ids"], corpus)
    prompts = load_prompts(_artifact(cfg, out, "prompts", "prompts.json"))
    _check_nodes("prompt set", prompts.meta["node_ids"], corpus)
    splits = make_splits(cfg, corpus)
    a_hat = normalize_adjacency(corpus.graph.adjacency)
    val_scores = model_scores(backbone, prompts, splits.val, a_hat)
    test_scores = model_scores(backbone, prompts, splits.test, a_hat)
    d = cfg.detect
    tau = select_threshold(val_scores, splits.val.labels, d.mode, d.tau, d.quantile)
    report = build_report(test_scores, tau, d.mode, splits.test.labels, splits.test.starts)
    _write_report(out, "scores", report, corpus, {"split": "test"})
    return {"scores": "scores.csv", "metrics": "metrics.json"}


def _metrics_row(name: str, report: DetectionReport) -> dict:
    m = report.metrics
    return {"name": name, "Pre": m["Pre"], "Rec": m["Rec"], "F1": m["F1"], "tau": report.tau}


def run_scheme(cfg: RunConfig, corpus: Corpus, splits: Splits, scheme_name: str, log_dir: Path | None = None):
    if scheme_name not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme_name!r}; expected one of {sorted(SCHEMES)}")
    mc = model_config(cfg, corpus)
    trained = train_model(splits, corpus.graph.adjacency, mc, cfg.pretrain, cfg.finetune, cfg.seed, SCHEMES[scheme_name], log_dir)
    d = cfg.detect
    report = evaluate(trained, splits, corpus.graph.adjacency, d.mode, d.tau, d.quantile)
    return trained, report


def stage_eval(cfg: RunConfig, out: Path) -> dict:
    """Pretrain, fine-tune and detect in one go, next to the persistence baseline."""
    corpus = load_data(cfg)
    splits = make_splits(cfg, corpus)
    trained, report = run_scheme(cfg, corpus, splits, "full", out)
    d = cfg.detect
    baseline = evaluate_persistence(splits, d.mode, d.tau, d.quantile)
    save_backbone(out / "backbone.json", trained.backbone, corpus, trained.pretrain_result)
    save_prompts(out / "prompts.json", trained.prompts, corpus)
    write_json(out / "loss_trace.json", {"pretrain": trained.pretrain_trace, "finetune": trained.finetune_trace})
    _write_report(out, "scores", report, corpus, {"split": "test"})
    _write_report(out, "baseline_scores", baseline, corpus, {"split": "test", "baseline": "persistence"})
    write_json(out / "eval.json", {"model": _metrics_row("full", report), "persistence": _metrics_row("persistence", baseline)})
    return {
        "checkpoint": "backbone.json",
        "prompts": "prompts.json",
        "loss_trace": "loss_trace.json",
        "scores": "scores.csv",
        "metrics": "metrics.json",
        "baseline_scores": "baseline_scores.csv",
        "baseline_metrics": "baseline_metrics.json",
        "eval": "eval.json",
    }


def stage_ablate(cfg: RunConfig, out: Path) -> dict:
    corpus = load_data(cfg)
    splits = make_splits(cfg, corpus)
    rows = []
    traces = {}
    for name in cfg.ablate.schemes:
        trained, report = run_scheme(cfg, corpus, splits, name)
        row = _metrics_row(name, report)
        row["description"] = SCHEMES[name].description
        rows.append(row)
        traces[name] = {"pretrain": trained.pretrain_trace, "finetune": trained.finetune_trace}
        log.info("ablate %s F1=%.4f", name, row["F1"])
    write_json(out / "ablation.json", rows)
    write_json(out / "loss_trace.json", traces)
    lines = ["scheme,Pre,Rec,F1,tau,description"]
    lines += [f"{r['name']},{r['Pre']!r},{r['Rec']!r},{r['F1']!r},{r['tau']!r},\"{r['description']}\"" for r in rows]
    (out / "ablation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {"ablation": "ablation.json", "ablation_table": "ablation.csv", "loss_trace": "loss_trace.json"}


# ---------------------------------------------------------------------------
# full-model gradient verification


def toy_gradcheck(cfg: RunConfig, n_nodes: int = 4, n_modalities: int = 2, w: int = 16, d_state: int = 4) -> dict:
    """Finite-difference check of the full backbone + joint loss on a toy instance."""
    from .data import build_adjacency, grid_coordinates
    from .model import TargetNetwork, build_predictor
    from .numeric import RngStream
    from .pretrain import AugmentConfig, augment, joint_loss

    mc = replace(cfg.model, n_modalities=n_modalities, d_state=d_state, d_k=4, fusion_hidden=8, gcn_hidden=8, d_z=8, head_hidden=8)
    backbone = build_backbone(mc, cfg.seed)
    predictor = build_predictor(mc, cfg.seed)
    target = TargetNetwork.from_backbone(backbone)
    adjacency = build_adjacency(grid_coordinates(n_nodes), k=min(2, n_nodes - 1)).adjacency
    a_hat = normalize_adjacency(adjacency)
    rng = RngStream(cfg.seed, ("gradcheck",))
    x = rng.child("x").normal((2, n_nodes, n_modalities, w))
    y = rng.child("y").normal((2, n_nodes, n_modalities))
    x_aug, a_aug, _ = augment(x, adjacency, AugmentConfig(), rng.child("augment"))
    a_hat_aug = normalize_adjacency(a_aug)
    eps = rng.child("eps").normal((2, n_nodes, w, mc.d_z))
    eps_t = rng.child("eps_t").normal((2, n_nodes, w, mc.d_z))

    def f():
        return joint_loss(backbone, predictor, target, x, y, a_hat, x_aug, a_hat_aug, rng, "sum", eps, eps_t).L

    params = {f"backbone.{k}": p for k, p in backbone.named_parameters()}
    params.update({f"predictor.{k}": p for k, p in predictor.named_parameters()})
    report = grad_check(f, params, h=cfg.gradcheck.h, tol=cfg.gradcheck.tol, max_coords=cfg.gradcheck.max_coords, rng=rng.child("coords"))
    return report.as_dict()


def stage_gradcheck(cfg: RunConfig, out: Path) -> dict:
    result = toy_gradcheck(cfg)
    write_json(out / "gradcheck.json", result)
    if not result["passed"]:
        raise GradcheckFailed(f"max relative error {result['max_rel_error']:.3e} exceeds {result['tol']:.1e}")
    return {"gradcheck": "gradcheck.json"}


class GradcheckFailed(RuntimeError):
    pass


STAGES = {
    "synth": stage_synth,
    "inject": stage_inject,
    "ingest": stage_ingest,
    "pretrain": stage_pretrain,
    "finetune": stage_finetune,
    "detect": stage_detect,
    "eval": stage_eval,
    "ablate": stage_ablate,
    "gradcheck": stage_gradcheck,
}
