"""Per-node temporal feature extraction.

Shapes follow ``[batch, node, modality, step]`` for inputs and
``[batch, node, step, modality]`` for per-step features.  Every block works on
all modalities at once; modality-specific weights carry a leading modality
axis instead of living in separate modules.
"""

from __future__ import annotations

import math
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .numeric import RngStream, linear_recurrence, softmax_lastdim


def init_uniform(p: torch.Tensor, fan_in: int, rng: RngStream) -> None:
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        p.copy_(rng.uniform(-bound, bound, p.shape))


def init_linear(layer: nn.Linear, rng: RngStream) -> None:
    init_uniform(layer.weight, layer.in_features, rng)
    if layer.bias is not None:
        with torch.no_grad():
            layer.bias.zero_()


class MLP(nn.Module):
    """Two affine layers with a ReLU in between."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int):
        super().__init__()
        self.fc1 = nn.Linear(d_in, d_hidden)
        self.fc2 = nn.Linear(d_hidden, d_out)

    def reset_parameters(self, rng: RngStream) -> None:
        init_linear(self.fc1, rng.child("fc1"))
        init_linear(self.fc2, rng.child("fc2"))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.relu(self.fc1(x)))


# ---------------------------------------------------------------------------
# discretization and scans


def zoh_discretize(a, b, delta, variant: str = "simplified"):
    """Zero-order-hold discretization of a diagonal continuous system.

    ``full``: ``a_bar = exp(delta*a)``, ``b_bar = (delta*a)^-1 (exp(delta*a) - 1) delta*b``
    (``delta*b`` where ``a == 0``).  ``simplified``: same ``a_bar``,
    ``b_bar = delta*b``.  Works on floats or tensors.
    """
    is_tensor = isinstance(a, torch.Tensor) or isinstance(delta, torch.Tensor)
    if not is_tensor:
        a_t, b_t, d_t = (torch.as_tensor(v, dtype=torch.float64) for v in (a, b, delta))
    else:
        a_t, b_t, d_t = a, b, delta
    if variant == "full":
        if bool((torch.as_tensor(d_t) <= 0).any()):
            raise ValueError("the full ZOH variant needs delta > 0")
    elif variant == "simplified":
        if bool((torch.as_tensor(d_t) < 0).any()):
            raise ValueError("delta must be non-negative")
    else:
        raise ValueError(f"unknown variant {variant!r}")
    da = d_t * a_t
    a_bar = torch.exp(da)
    if variant == "full":
        safe = torch.where(da == 0, torch.ones_like(da), da)
        # expm1 keeps the small-delta regime accurate
        factor = torch.where(da == 0, torch.ones_like(da), torch.expm1(safe) / safe)
        b_bar = factor * d_t * b_t
    else:
        b_bar = d_t * b_t
    if not is_tensor:
        return float(a_bar), float(b_bar)
    return a_bar, b_bar


def selective_scan_reference(
    log_a: torch.Tensor, b_bar: torch.Tensor, c: torch.Tensor, z: torch.Tensor
) -> torch.Tensor:
    """Step-by-step recurrence ``h_t = a_bar_t * h_{t-1} + b_bar_t z_t``, ``y_t = c_t . h_t``.

    ``log_a``, ``b_bar``, ``c``: ``[..., W, d]`` (diagonal state, ``a_bar = exp(log_a)``);
    ``z``: ``[..., W, k]`` input channels, each with its own ``d``-dim state.
    Returns ``y``: ``[..., W, k]``.
    """
    *lead, w, d = log_a.shape
    k = z.shape[-1]
    h = z.new_zeros(*lead, k, d)
    ys = []
    for t in range(w):
        h = torch.exp(log_a[..., t, None, :]) * h + b_bar[..., t, None, :] * z[..., t, :, None]
        ys.append((h * c[..., t, None, :]).sum(-1))
    return torch.stack(ys, dim=-2)


def selective_scan(log_a: torch.Tensor, b_bar: torch.Tensor, c: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """Same result as :func:`selective_scan_reference`, built on :func:`linear_recurrence`."""
    u = b_bar[..., :, None, :] * z[..., :, :, None]  # [..., W, k, d]
    h = linear_recurrence(torch.exp(log_a)[..., :, None, :], u)
    return torch.einsum("...wkd,...wd->...wk", h, c)


# ---------------------------------------------------------------------------
# blocks


class MSDConv(nn.Module):
    """Multi-scale causal dilated convolution, one kernel per (modality, rate)."""

    def __init__(self, n_modalities: int, dilations: Sequence[int] = (1, 2, 4), kernel_size: int = 3):
        super().__init__()
        if len(dilations) < 1 or len(set(dilations)) != len(dilations):
            raise ValueError("need at least one dilation rate, all distinct")
        if any(d < 1 for d in dilations):
            raise ValueError("dilation rates must be positive")
        self.dilations = tuple(int(d) for d in dilations)
        self.n_modalities = n_modalities
        self.kernel_size = kernel_size
        self.weight = nn.Parameter(torch.zeros(len(self.dilations), n_modalities, 1, kernel_size))
        self.bias = nn.Parameter(torch.zeros(len(self.dilations), n_modalities))

    @property
    def out_channels(self) -> int:
        return len(self.dilations)

    def reset_parameters(self, rng: RngStream) -> None:
        init_uniform(self.weight, self.kernel_size, rng)
        with torch.no_grad():
            self.bias.zero_()

    def lag_weights(self) -> tuple[list[int], torch.Tensor]:
        """Distinct lags used by any rate, and the weights as ``[k, M, n_lags]``."""
        lags = sorted({q * d for d in self.dilations for q in range(self.kernel_size)})
        pos = {lag: i for i, lag in enumerate(lags)}
        index = torch.tensor([[pos[q * d] for q in range(self.kernel_size)] for d in self.dilations])
        w = self.weight[:, :, 0, :]  # k, M, K
        full = w.new_zeros(len(self.dilations), self.n_modalities, len(lags))
        full = full.scatter_add(2, index[:, None, :].expand_as(w), w)
        return lags, full

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """``x``: ``[B, N, M, W]`` -> ``[B, N, M, W, k]``.

        Tap ``q`` of the rate-``d`` kernel multiplies ``x[t - q*d]`` (zero
        before the window start).  All rates share one stack of lagged copies.
        """
        w = x.shape[-1]
        lags, full = self.lag_weights()
        padded = F.pad(x, (max(lags), 0))
        shifted = torch.stack([padded[..., max(lags) - lag : max(lags) - lag + w] for lag in lags], dim=-1)
        out = torch.einsum("bnmwl,kml->bnmwk", shifted, full) + self.bias.T[:, None, :]
        return F.relu(out)


class SelectiveSSM(nn.Module):
    """Input-dependent diagonal SSM, one parameter set per modality.

    From each step's features ``z_t`` a linear projection yields the gate for
    ``A~_t = -exp(a_log) * softplus(.)`` (strictly negative), ``B~_t``, ``C_t``
    and ``delta_t = softplus(.)`` (strictly positive).  Discretization follows
    the simplified hold ``a_bar = exp(delta A~)``, ``b_bar = delta B~``; the
    ``k`` per-channel outputs are mixed to one value per step.
    """

    def __init__(self, n_modalities: int, in_dim: int, d_state: int = 16):
        super().__init__()
        self.n_modalities = n_modalities
        self.in_dim = in_dim
        self.d_state = d_state
        p = 3 * d_state + 1
        self.proj_weight = nn.Parameter(torch.zeros(n_modalities, in_dim, p))
        self.proj_bias = nn.Parameter(torch.zeros(n_modalities, p))
        self.a_log = nn.Parameter(torch.zeros(n_modalities, d_state))
        self.out_weight = nn.Parameter(torch.zeros(n_modalities, in_dim))
        self.out_bias = nn.Parameter(torch.zeros(n_modalities))

    def reset_parameters(self, rng: RngStream) -> None:
        init_uniform(self.proj_weight, self.in_dim, rng.child("proj"))
        init_uniform(self.out_weight, self.in_dim, rng.child("out"))
        with torch.no_grad():
            self.proj_bias.zero_()
            self.out_bias.zero_()
            self.a_log.zero_()  # log(1)

    def discretized(self, z: torch.Tensor):
        """``z``: ``[..., M, W, k]`` -> ``(log_a_bar, b_bar, c, delta)``, each ``[..., M, W, d]`` (delta ``[..., M, W, 1]``)."""
        d = self.d_state
        proj = torch.einsum("...mwk,mkp->...mwp", z, self.proj_weight) + self.proj_bias[:, None, :]
        a_cont = -torch.exp(self.a_log)[:, None, :] * F.softplus(proj[..., :d])
        b_cont = proj[..., d : 2 * d]
        c = proj[..., 2 * d : 3 * d]
        delta = F.softplus(proj[..., 3 * d :])
        return delta * a_cont, delta * b_cont, c, delta

    def forward(self, z: torch.Tensor, reference: bool = False) -> torch.Tensor:
        """``z``: ``[B, N, M, W, k]`` -> ``[B, N, M, W]``."""
        log_a, b_bar, c, _ = self.discretized(z)
        if reference:
            y = selective_scan_reference(log_a, b_bar, c, z)
        else:
            y = selective_scan(log_a, b_bar, c, z)
        return torch.einsum("...mwk,mk->...mw", y, self.out_weight) + self.out_bias[:, None]


class IntraModalLayer(nn.Module):
    """``x + SSM(MSDConv(x))`` per modality; without MSDConv the raw series feeds the SSM."""

    def __init__(self, n_modalities: int, dilations, kernel_size: int, d_state: int, use_msdconv: bool = True):
        super().__init__()
        self.msdconv = MSDConv(n_modalities, dilations, kernel_size) if use_msdconv else None
        in_dim = self.msdconv.out_channels if use_msdconv else 1
        self.ssm = SelectiveSSM(n_modalities, in_dim, d_state)

    def reset_parameters(self, rng: RngStream) -> None:
        if self.msdconv is not None:
            self.msdconv.reset_parameters(rng.child("msdconv"))
        self.ssm.reset_parameters(rng.child("ssm"))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = self.msdconv(x) if self.msdconv is not None else x[..., None]
        return x + self.ssm(z)


class IntraModalEncoder(nn.Module):
    def __init__(
        self,
        n_modalities: int,
        dilations: Sequence[int] = (1, 2, 4),
        kernel_size: int = 3,
        d_state: int = 16,
        n_layers: int = 2,
        use_msdconv: bool = True,
    ):
        super().__init__()
        self.layers = nn.ModuleList(
            IntraModalLayer(n_modalities, dilations, kernel_size, d_state, use_msdconv) for _ in range(n_layers)
        )

    def reset_parameters(self, rng: RngStream) -> None:
        for i, layer in enumerate(self.layers):
            layer.reset_parameters(rng.child("layer", i))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """``x``: ``[B, N, M, W]`` -> ``Y``: ``[B, N, W, M]``."""
        for layer in self.layers:
            x = layer(x)
        return x.transpose(-1, -2)


class CrossModalAttention(nn.Module):
    """Attention of every modality's steps over every modality's steps.

    Query/key projections lift each scalar step to ``d_k`` features; values stay
    scalar so each modality's fused output is one value per step.  Weights are
    shared by all modality pairs.  The per-pair outputs ``alpha_ij V_j`` are
    averaged over ``j`` (self included unless ``exclude_self``), which keeps
    ``O_i`` a convex combination of value rows.
    """

    def __init__(self, d_k: int = 8, exclude_self: bool = False):
        super().__init__()
        if d_k < 1:
            raise ValueError("d_k must be positive")
        self.d_k = d_k
        self.exclude_self = exclude_self
        self.w_q = nn.Parameter(torch.zeros(d_k))
        self.b_q = nn.Parameter(torch.zeros(d_k))
        self.w_k = nn.Parameter(torch.zeros(d_k))
        self.b_k = nn.Parameter(torch.zeros(d_k))
        self.w_v = nn.Parameter(torch.zeros(()))
        self.b_v = nn.Parameter(torch.zeros(()))

    def reset_parameters(self, rng: RngStream) -> None:
        for name in ("w_q", "w_k"):
            init_uniform(getattr(self, name), 1, rng.child(name))
        init_uniform(self.w_v, 1, rng.child("w_v"))
        with torch.no_grad():
            for name in ("b_q", "b_k", "b_v"):
                getattr(self, name).zero_()

    def attention(self, x: torch.Tensor):
        """``x``: ``[B, N, M, W]`` -> ``(alpha, V)``.

        ``alpha[b, n, i, w, j, s]`` is the weight query step ``w`` of modality
        ``i`` puts on key step ``s`` of modality ``j``; rows over ``s`` sum to one.
        ``V`` is ``[B, N, M, W]``.
        """
        b, n, m, w = x.shape
        q = x[..., None] * self.w_q + self.b_q
        k = x[..., None] * self.w_k + self.b_k
        v = x * self.w_v + self.b_v
        scores = (q.reshape(b * n, m * w, self.d_k) @ k.reshape(b * n, m * w, self.d_k).transpose(1, 2)).reshape(
            b, n, m, w, m, w
        ) / math.sqrt(self.d_k)
        return softmax_lastdim(scores), v

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """``x``: ``[B, N, M, W]`` -> ``O``: ``[B, N, W, M]``."""
        alpha, v = self.attention(x)
        pair = (alpha * v[:, :, None, None, :, :]).sum(-1)  # [B, N, M_i, W, M_j]
        m = x.shape[2]
        if self.exclude_self and m > 1:
            keep = ~torch.eye(m, dtype=torch.bool)
            o = (pair * keep[:, None, :]).sum(-1) / (m - 1)
        else:
            o = pair.mean(-1)
        return o.transpose(-1, -2)


class TemporalEncoder(nn.Module):
    """``F = MLP(concat(X, Y, O))`` with ``Y`` the intra-modal and ``O`` the cross-modal path."""

    def __init__(
        self,
        n_modalities: int,
        dilations: Sequence[int] = (1, 2, 4),
        kernel_size: int = 3,
        d_state: int = 16,
        d_k: int = 8,
        hidden: int = 32,
        use_msdconv: bool = True,
        use_attention: bool = True,
        exclude_self: bool = False,
    ):
        super().__init__()
        self.n_modalities = n_modalities
        self.intra = IntraModalEncoder(n_modalities, dilations, kernel_size, d_state, 2, use_msdconv)
        self.attention = CrossModalAttention(d_k, exclude_self) if use_attention else None
        self.fusion = MLP(3 * n_modalities, hidden, n_modalities)

    def reset_parameters(self, rng: RngStream) -> None:
        self.intra.reset_parameters(rng.child("intra"))
        if self.attention is not None:
            self.attention.reset_parameters(rng.child("attention"))
        self.fusion.reset_parameters(rng.child("fusion"))

    def fuse(self, x: torch.Tensor, y: torch.Tensor, o: torch.Tensor) -> torch.Tensor:
        xt = x.transpose(-1, -2)
        if not (xt.shape == y.shape == o.shape):
            raise ValueError(f"axis mismatch: X^T {tuple(xt.shape)}, Y {tuple(y.shape)}, O {tuple(o.shape)}")
        return self.fusion(torch.cat([xt, y, o], dim=-1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """``x``: ``[B, N, M, W]`` -> ``F``: ``[B, N, W, M]``."""
        if x.shape[2] != self.n_modalities:
            raise ValueError(f"expected {self.n_modalities} modalities, got {x.shape[2]}")
        y = self.intra(x)
        if self.attention is not None:
            o = self.attention(x)
        else:
            o = torch.zeros_like(y)
        return self.fuse(x, y, o)
