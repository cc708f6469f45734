from __future__ import annotations

import json
import warnings

import numpy as np
import pytest
import torch

from wsnad.data import build_adjacency, grid_coordinates
from wsnad.model import ModelConfig, TargetNetwork, build_backbone, build_predictor
from wsnad.numeric import NonFiniteError, RngStream, grad_check
from wsnad.pipeline import split_windows, synth_corpus
from wsnad.pretrain import (
    AugmentConfig,
    PretrainConfig,
    augment,
    byol_loss,
    ema_update,
    joint_loss,
    perturb_edges,
    pred_loss,
    pretrain,
    recon_loss,
)
from wsnad.spatial import normalize_adjacency

from .conftest import rand


# --- augmentation -----------------------------------------------------------


def test_augment_zero_ratios_is_identity():
    x = rand(2, 4, 3, 20)
    a = build_adjacency(grid_coordinates(4), 2).adjacency
    cfg = AugmentConfig(0.0, 10, 0.0, 0.0)
    x_aug, a_aug, rec = augment(x, a, cfg, RngStream(0))
    assert torch.equal(x_aug, x) and np.array_equal(a_aug, a)
    assert not rec.mask.any() and rec.dropped == [] and rec.added == []


def test_augment_mask_coverage_over_seeds():
    x = torch.ones(1, 3, 2, 300)
    a = build_adjacency(grid_coordinates(3), 1).adjacency
    for seed in range(100):
        x_aug, _, rec = augment(x, a, AugmentConfig(), RngStream(seed))
        counts = rec.mask.sum(-1)
        assert ((counts >= 30) & (counts <= 60)).all()
        assert torch.equal(x_aug == 0, torch.from_numpy(rec.mask))


def test_perturbed_graph_stays_symmetric():
    a = build_adjacency(grid_coordinates(9), 3).adjacency
    n_edges = int(np.triu(a).sum())
    for seed in range(50):
        out, dropped, added = perturb_edges(a, 0.3, 0.2, np.random.default_rng(seed))
        assert np.array_equal(out, out.T) and not out.diagonal().any()
        assert len(dropped) == round(0.3 * n_edges) and len(added) == round(0.2 * n_edges)
        for i, j in dropped:
            assert a[i, j] == 1 and out[i, j] == 0
        for i, j in added:
            assert a[i, j] == 0 and out[i, j] == 1


def test_augment_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(temporal_mask_ratio=1.0)
    with pytest.raises(ValueError):
        AugmentConfig(edge_drop_ratio=-0.1)


# --- EMA and losses ---------------------------------------------------------


def test_ema_update_cases():
    xi, theta = torch.nn.Linear(2, 2), torch.nn.Linear(2, 2)
    before = [p.detach().clone() for p in xi.parameters()]
    ema_update(xi, theta, 1.0)
    assert all(torch.equal(p, b) for p, b in zip(xi.parameters(), before))
    ema_update(xi, theta, 0.0)
    assert all(torch.equal(p, q) for p, q in zip(xi.parameters(), theta.parameters()))
    with torch.no_grad():
        for p in xi.parameters():
            p.fill_(1.0)
        for p in theta.parameters():
            p.fill_(0.0)
    ema_update(xi, theta, 0.99)
    assert all(bool((p == 0.99).all()) for p in xi.parameters())
    with pytest.raises(ValueError):
        ema_update(xi, theta, 1.5)


def test_byol_loss_cases():
    z = rand(4, 6)
    assert float(byol_loss(z, z)) == pytest.approx(0.0, abs=1e-15)
    assert float(byol_loss(-z, z)) == pytest.approx(4.0, abs=1e-15)
    q = torch.tensor([[1.0, 0.0]])
    assert float(byol_loss(q, torch.tensor([[0.0, 3.0]]))) == 2.0
    with pytest.warns(RuntimeWarning):
        assert float(byol_loss(torch.zeros(1, 2), q)) == 2.0
    for seed in range(50):
        v = float(byol_loss(rand(3, 5, seed=seed), rand(3, 5, seed=seed + 100)))
        assert 0.0 <= v <= 4.0


def test_byol_loss_stops_target_gradient():
    q = rand(3, 4).requires_grad_(True)
    z = rand(3, 4, seed=1).requires_grad_(True)
    byol_loss(q, z).backward()
    assert q.grad is not None and z.grad is None


def test_pred_and_recon_losses():
    y = rand(2, 3, 2)
    assert float(pred_loss(y, y)) == 0.0
    assert float(pred_loss(torch.tensor([[4.0]]), torch.tensor([[1.0]]))) == 9.0
    perm = torch.randperm(6)
    yp = rand(2, 3, 2, seed=1)
    torch.testing.assert_close(
        pred_loss(yp.reshape(2, 6)[:, perm].reshape(2, 3, 2), y.reshape(2, 6)[:, perm].reshape(2, 3, 2)), pred_loss(yp, y)
    )
    x = rand(1, 2, 2, 5)
    xh = x.clone()
    xh[0, 1, 0, 3] += 0.7
    assert float(recon_loss(xh, x)) == pytest.approx(0.49, abs=1e-15)
    assert float(pred_loss(yp, y, "mean")) == pytest.approx(float(((yp - y) ** 2).mean()))
    with pytest.raises(ValueError):
        pred_loss(y, y[..., :1])


def test_recon_head_gradcheck(toy_backbone):
    h = rand(1, 4, 6, 8)
    x = rand(1, 4, 2, 6, seed=1)
    head = toy_backbone.recon_head
    rep = grad_check(lambda: recon_loss(head(h), x), dict(head.named_parameters()))
    assert rep.passed, rep.as_dict()


# --- joint loss and training ------------------------------------------------


def _joint(toy_backbone, toy_graph, reduction="sum"):
    pred = build_predictor(toy_backbone.cfg, 0)
    target = TargetNetwork.from_backbone(toy_backbone)
    x = rand(2, 4, 2, 16)
    y = rand(2, 4, 2, seed=1)
    a = toy_graph.adjacency
    x_aug, a_aug, _ = augment(x, a, AugmentConfig(), RngStream(0))
    losses = joint_loss(toy_backbone, pred, target, x, y, normalize_adjacency(a), x_aug, normalize_adjacency(a_aug), RngStream(1), reduction)
    return losses, target


def test_joint_loss_unit_weights_and_target_gradients(toy_backbone, toy_graph):
    losses, target = _joint(toy_backbone, toy_graph)
    vals = losses.floats()
    assert float((losses.L - (losses.L_cont + losses.L_pred + losses.L_recon)).detach()) == 0.0
    assert 0.0 <= vals["L_cont"] <= 4.0
    losses.L.backward()
    assert all(p.grad is None or bool((p.grad == 0).all()) for p in target.parameters())
    assert all(not p.requires_grad for p in target.parameters())


def _tiny_data(seed=0, t=600, w=16):
    corpus = synth_corpus(4, 2, t, seed=seed, k=2)
    return corpus, split_windows(corpus, w, train_stride=8, eval_stride=8)


def _cfg():
    return ModelConfig(n_modalities=2, d_state=4, d_k=4, fusion_hidden=8, gcn_hidden=8, d_z=8, head_hidden=8)


def test_pretrain_zero_epochs_keeps_init():
    corpus, splits = _tiny_data()
    bb = build_backbone(_cfg(), 0)
    init = {k: v.clone() for k, v in bb.state_dict().items()}
    res = pretrain(bb, build_predictor(_cfg(), 0), splits.train, corpus.graph.adjacency, PretrainConfig(epochs=0), 0)
    assert res.trace == []
    assert all(torch.equal(init[k], v) for k, v in bb.state_dict().items())


def test_pretrain_deterministic_and_logged(tmp_path):
    corpus, splits = _tiny_data()
    traces = []
    for run in range(2):
        bb = build_backbone(_cfg(), 0)
        res = pretrain(bb, build_predictor(_cfg(), 0), splits.train, corpus.graph.adjacency, PretrainConfig(epochs=2), 0, tmp_path / f"log{run}.jsonl")
        traces.append((res.trace, {k: v.clone() for k, v in bb.state_dict().items()}))
    assert json.dumps(traces[0][0]) == json.dumps(traces[1][0])
    assert all(torch.equal(traces[0][1][k], traces[1][1][k]) for k in traces[0][1])
    records = [json.loads(line) for line in (tmp_path / "log0.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in records] == [0, 1]
    assert set(records[0]) == {"epoch", "L", "L_cont", "L_pred", "L_recon", "wall_ms"}


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_pretrain_reduces_loss(seed):
    corpus = synth_corpus(8, 3, 600, seed=seed, k=4)
    splits = split_windows(corpus, 16, train_stride=4)
    cfg = ModelConfig(n_modalities=3, d_state=4, d_k=4, fusion_hidden=8, gcn_hidden=8, d_z=8, head_hidden=16)
    bb = build_backbone(cfg, seed)
    res = pretrain(bb, build_predictor(cfg, seed), splits.train, corpus.graph.adjacency, PretrainConfig(epochs=20), seed)
    assert res.trace[19]["L"] < res.trace[0]["L"]


def test_pretrain_aborts_on_nonfinite():
    corpus, splits = _tiny_data()
    splits.train.windows[0, 0, 0, 0] = np.nan
    bb = build_backbone(_cfg(), 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(NonFiniteError, match="batch"):
            pretrain(bb, build_predictor(_cfg(), 0), splits.train, corpus.graph.adjacency, PretrainConfig(epochs=1, batch_size=64), 0)
