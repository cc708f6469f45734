"""Variational graph convolution over per-step node features."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .numeric import DTYPE, RngStream
from .temporal import init_uniform


def normalize_adjacency(adjacency) -> torch.Tensor:
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the degree matrix of ``A + I``."""
    a = torch.as_tensor(np.asarray(adjacency), dtype=DTYPE)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("adjacency must be square")
    a_tilde = a + torch.eye(a.shape[0], dtype=DTYPE)
    d_inv_sqrt = a_tilde.sum(dim=1).rsqrt()
    return d_inv_sqrt[:, None] * a_tilde * d_inv_sqrt[None, :]


@dataclass
class VGCNOutput:
    mu: torch.Tensor
    sigma: torch.Tensor
    z: torch.Tensor


def project(h: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    """``h @ w`` over the last axis as one 2-D product.

    ``torch.matmul`` on a batched left operand picks its kernel by whether
    ``w`` requires grad, so freezing would otherwise perturb the last bits.
    """
    return (h.reshape(-1, h.shape[-1]) @ w).reshape(*h.shape[:-1], w.shape[-1])


def propagate(a_hat: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
    """Apply ``a_hat`` over the node axis of ``h`` (``[B, N, W, C]``)."""
    return torch.einsum("ij,bjwc->biwc", a_hat, h)


class VGCN(nn.Module):
    """One shared GCN trunk layer, then linear mean and log-scale GCN heads.

    Per time step with shared weights: ``H = ReLU(A_hat F W_t)``,
    ``mu = A_hat H W_mu``, ``sigma = exp(clamp(A_hat H W_sigma))`` and
    ``Z = mu + sigma * eps``.  ``eps`` is standard normal in training mode and
    zero in eval mode, so eval embeddings are exactly ``mu``.

    With ``residual=True`` the mean head also gets a linear skip from the
    node's own input, ``mu = A_hat H W_mu + F W_skip``.  Two rounds of
    neighbourhood averaging otherwise dilute a node's own signal to the point
    where next-step prediction falls behind a last-value predictor.
    """

    def __init__(
        self,
        d_in: int,
        hidden: int = 32,
        d_z: int = 32,
        sigma_min: float = 1e-4,
        sigma_max: float = 10.0,
        residual: bool = True,
    ):
        super().__init__()
        self.d_in, self.hidden, self.d_z = d_in, hidden, d_z
        self.log_sigma_min = math.log(sigma_min)
        self.log_sigma_max = math.log(sigma_max)
        self.w_trunk = nn.Parameter(torch.zeros(d_in, hidden))
        self.w_mu = nn.Parameter(torch.zeros(hidden, d_z))
        self.w_sigma = nn.Parameter(torch.zeros(hidden, d_z))
        self.w_skip = nn.Parameter(torch.zeros(d_in, d_z)) if residual else None

    def reset_parameters(self, rng: RngStream) -> None:
        init_uniform(self.w_trunk, self.d_in, rng.child("trunk"))
        init_uniform(self.w_mu, self.hidden, rng.child("mu"))
        init_uniform(self.w_sigma, self.hidden, rng.child("sigma"))
        if self.w_skip is not None:
            init_uniform(self.w_skip, self.d_in, rng.child("skip"))

    def forward(
        self,
        f: torch.Tensor,
        a_hat: torch.Tensor,
        train: bool = False,
        rng: RngStream | None = None,
        eps: torch.Tensor | None = None,
    ) -> VGCNOutput:
        """``f``: ``[B, N, W, C]`` -> latent ``[B, N, W, d_z]``.

        In training mode ``eps`` is taken as given or drawn from ``rng``.
        """
        h = F.relu(project(propagate(a_hat, f), self.w_trunk))
        ah = propagate(a_hat, h)
        mu = project(ah, self.w_mu)
        if self.w_skip is not None:
            mu = mu + project(f, self.w_skip)
        log_sigma = project(ah, self.w_sigma).clamp(self.log_sigma_min, self.log_sigma_max)
        sigma = log_sigma.exp()
        if not train:
            return VGCNOutput(mu, sigma, mu)
        if eps is None:
            if rng is None:
                raise ValueError("training mode needs an rng or explicit eps")
            eps = rng.normal(mu.shape)
        return VGCNOutput(mu, sigma, mu + sigma * eps)


class AffineResize(nn.Module):
    """Stand-in for the VGCN when it is ablated: a per-step affine map to ``d_z``."""

    def __init__(self, d_in: int, d_z: int):
        super().__init__()
        self.linear = nn.Linear(d_in, d_z)

    def reset_parameters(self, rng: RngStream) -> None:
        init_uniform(self.linear.weight, self.linear.in_features, rng)
        with torch.no_grad():
            self.linear.bias.zero_()

    def forward(self, f, a_hat=None, train: bool = False, rng=None, eps=None) -> VGCNOutput:
        z = self.linear(f)
        return VGCNOutput(z, torch.zeros_like(z), z)
