"""Backbone assembly: temporal encoder -> (variational) graph encoder -> heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .numeric import RngStream
from .spatial import VGCN, AffineResize, VGCNOutput
from .temporal import MLP, TemporalEncoder


@dataclass
class ModelConfig:
    n_modalities: int = 3
    dilations: tuple[int, ...] = (1, 2, 4)
    kernel_size: int = 3
    d_state: int = 16
    d_k: int = 8
    fusion_hidden: int = 32
    gcn_hidden: int = 32
    d_z: int = 32
    head_hidden: int = 64
    use_msdconv: bool = True
    use_attention: bool = True
    use_vgcn: bool = True
    exclude_self: bool = False
    gcn_residual: bool = True
    sigma_min: float = 1e-4
    sigma_max: float = 10.0

    def __post_init__(self) -> None:
        self.dilations = tuple(int(d) for d in self.dilations)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d


class Encoder(nn.Module):
    """``f_enc``: standardized window ``[B, N, M, W]`` -> node embeddings ``[B, N, W, d_z]``."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.temporal = TemporalEncoder(
            cfg.n_modalities,
            cfg.dilations,
            cfg.kernel_size,
            cfg.d_state,
            cfg.d_k,
            cfg.fusion_hidden,
            cfg.use_msdconv,
            cfg.use_attention,
            cfg.exclude_self,
        )
        if cfg.use_vgcn:
            self.spatial: nn.Module = VGCN(cfg.n_modalities, cfg.gcn_hidden, cfg.d_z, cfg.sigma_min, cfg.sigma_max, cfg.gcn_residual)
        else:
            self.spatial = AffineResize(cfg.n_modalities, cfg.d_z)

    def reset_parameters(self, rng: RngStream) -> None:
        self.temporal.reset_parameters(rng.child("temporal"))
        self.spatial.reset_parameters(rng.child("spatial"))

    def forward(self, x, a_hat, train: bool = False, rng: RngStream | None = None, eps=None) -> VGCNOutput:
        return self.spatial(self.temporal(x), a_hat, train=train, rng=rng, eps=eps)


class PredictionHead(nn.Module):
    """Next-step prediction from ``[mean over steps, last step]`` of the embedding."""

    def __init__(self, d_z: int, hidden: int, n_modalities: int):
        super().__init__()
        self.mlp = MLP(2 * d_z, hidden, n_modalities)

    def reset_parameters(self, rng: RngStream) -> None:
        self.mlp.reset_parameters(rng)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        """``h``: ``[B, N, W, d_z]`` -> ``[B, N, M]``."""
        return self.mlp(torch.cat([h.mean(dim=-2), h[..., -1, :]], dim=-1))


class ReconstructionHead(nn.Module):
    def __init__(self, d_z: int, hidden: int, n_modalities: int):
        super().__init__()
        self.mlp = MLP(d_z, hidden, n_modalities)

    def reset_parameters(self, rng: RngStream) -> None:
        self.mlp.reset_parameters(rng)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        """``h``: ``[B, N, W, d_z]`` -> ``[B, N, M, W]`` (same layout as the input window)."""
        return self.mlp(h).transpose(-1, -2)


class Projector(nn.Module):
    """Pools node embeddings over time and projects them for the contrastive task."""

    def __init__(self, d_z: int, hidden: int):
        super().__init__()
        self.mlp = MLP(d_z, hidden, d_z)

    def reset_parameters(self, rng: RngStream) -> None:
        self.mlp.reset_parameters(rng)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.mlp(h.mean(dim=-2))


class Backbone(nn.Module):
    """All pretrained parameters: encoder, projection head, prediction and reconstruction heads."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.projector = Projector(cfg.d_z, cfg.head_hidden)
        self.pred_head = PredictionHead(cfg.d_z, cfg.head_hidden, cfg.n_modalities)
        self.recon_head = ReconstructionHead(cfg.d_z, cfg.head_hidden, cfg.n_modalities)

    def reset_parameters(self, rng: RngStream) -> None:
        self.encoder.reset_parameters(rng.child("encoder"))
        self.projector.reset_parameters(rng.child("projector"))
        self.pred_head.reset_parameters(rng.child("pred_head"))
        self.recon_head.reset_parameters(rng.child("recon_head"))

    def embed(self, x, a_hat, train: bool = False, rng: RngStream | None = None, eps=None) -> torch.Tensor:
        return self.encoder(x, a_hat, train=train, rng=rng, eps=eps).z

    def predict(self, x, a_hat) -> torch.Tensor:
        """Deterministic (eval-mode) next-step prediction without prompts."""
        return self.pred_head(self.embed(x, a_hat, train=False))


class Predictor(nn.Module):
    """Online-only predictor head ``q_phi``."""

    def __init__(self, d_z: int, hidden: int):
        super().__init__()
        self.mlp = MLP(d_z, hidden, d_z)

    def reset_parameters(self, rng: RngStream) -> None:
        self.mlp.reset_parameters(rng)

    def forward(self, p: torch.Tensor) -> torch.Tensor:
        return self.mlp(p)


class TargetNetwork(nn.Module):
    """EMA copy of encoder + projection head; never trained by gradients."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.encoder = Encoder(cfg)
        self.projector = Projector(cfg.d_z, cfg.head_hidden)

    @classmethod
    def from_backbone(cls, backbone: Backbone) -> TargetNetwork:
        target = cls(backbone.cfg)
        target.encoder.load_state_dict(backbone.encoder.state_dict())
        target.projector.load_state_dict(backbone.projector.state_dict())
        for p in target.parameters():
            p.requires_grad_(False)
        return target

    def forward(self, x, a_hat, train: bool = True, rng: RngStream | None = None) -> torch.Tensor:
        with torch.no_grad():
            return self.projector(self.encoder(x, a_hat, train=train, rng=rng).z)


def build_backbone(cfg: ModelConfig, seed: int) -> Backbone:
    model = Backbone(cfg)
    model.reset_parameters(RngStream(seed, ("init", "backbone")))
    return model


def build_predictor(cfg: ModelConfig, seed: int) -> Predictor:
    q = Predictor(cfg.d_z, cfg.head_hidden)
    q.reset_parameters(RngStream(seed, ("init", "predictor")))
    return q
