"""Numeric substrate: float64 torch tensors, seeded Philox streams, gradient checks.

Everything downstream computes on ``torch.float64`` CPU tensors.  Randomness is
drawn from :class:`RngStream`, a thin wrapper around numpy's counter-based
Philox-4x64 generator, so that a (seed, path) pair always yields the same draws
regardless of which other streams were consumed first.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

DTYPE = torch.float64

torch.set_default_dtype(DTYPE)


class NonFiniteError(FloatingPointError):
    """Raised when a tensor that must be finite contains NaN or Inf."""


def ensure_finite(t: torch.Tensor, what: str = "tensor") -> torch.Tensor:
    if not bool(torch.isfinite(t).all()):
        raise NonFiniteError(f"{what} contains non-finite values")
    return t


def as_tensor(x, requires_grad: bool = False) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE).clone()
    t.requires_grad_(requires_grad)
    return t


# ---------------------------------------------------------------------------
# randomness


def _path_key(part: str | int) -> int:
    if isinstance(part, int):
        if part < 0:
            raise ValueError("stream path integers must be non-negative")
        return part
    return zlib.crc32(part.encode("utf-8"))


class RngStream:
    """Reproducible random stream identified by ``seed`` and a name path.

    ``RngStream(7).child("inject", 3)`` is the same stream in every process and
    does not depend on how many draws were taken from ``RngStream(7)``.
    """

    algorithm = "philox4x64-10"

    def __init__(self, seed: int, path: Sequence[str | int] = ()):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.path = tuple(path)
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(_path_key(p) for p in self.path))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def child(self, *names: str | int) -> RngStream:
        return RngStream(self.seed, self.path + names)

    def normal(self, shape: Sequence[int]) -> torch.Tensor:
        return torch.from_numpy(self.generator.standard_normal(tuple(shape)))

    def uniform(self, low: float, high: float, shape: Sequence[int]) -> torch.Tensor:
        return torch.from_numpy(self.generator.uniform(low, high, tuple(shape)))

    @property
    def state(self) -> dict:
        return self.generator.bit_generator.state

    @state.setter
    def state(self, value: dict) -> None:
        self.generator.bit_generator.state = value

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path!r})"


# ---------------------------------------------------------------------------
# primitives not provided directly by torch


def causal_dilated_conv(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None,
    dilation: int,
    groups: int = 1,
) -> torch.Tensor:
    """Causal dilated 1-D convolution over the last axis of ``x`` (B, C_in, L).

    ``weight`` has shape (C_out, C_in // groups, K) and is indexed by lag:
    tap ``q`` multiplies ``x[t - q * dilation]``.  Left zero padding keeps the
    output length equal to L.
    """
    if dilation < 1:
        raise ValueError(f"dilation must be positive, got {dilation}")
    k = weight.shape[-1]
    if k < 1:
        raise ValueError("kernel must have at least one tap")
    pad = dilation * (k - 1)
    xp = F.pad(x, (pad, 0))
    # conv1d is a cross-correlation: flip so that tap q lines up with lag q
    return F.conv1d(xp, weight.flip(-1), bias, dilation=dilation, groups=groups)


def conv1d_dilated(x, kernel, dilation: int, bias=0.0) -> torch.Tensor:
    """Single-channel causal dilated convolution of a length-L signal."""
    x = torch.as_tensor(x, dtype=DTYPE)
    kernel = torch.as_tensor(kernel, dtype=DTYPE)
    if kernel.ndim != 1 or kernel.numel() == 0:
        raise ValueError("kernel must be a non-empty 1-D tensor")
    if x.ndim != 1 or x.numel() == 0:
        raise ValueError("x must be a non-empty 1-D tensor")
    b = torch.as_tensor(bias, dtype=DTYPE).reshape(1)
    y = causal_dilated_conv(x.reshape(1, 1, -1), kernel.reshape(1, 1, -1), b, dilation)
    return y.reshape(-1)


def softmax_lastdim(x: torch.Tensor) -> torch.Tensor:
    # torch's fused kernel subtracts the row max before exponentiating
    return torch.softmax(x, dim=-1)


class _LinearRecurrence(torch.autograd.Function):
    @staticmethod
    def forward(ctx, a, u):
        h = torch.empty_like(u)
        state = torch.zeros_like(u[..., 0, :, :])
        for t in range(u.shape[-3]):
            state = torch.addcmul(u[..., t, :, :], a[..., t, :, :], state)
            h[..., t, :, :] = state
        ctx.save_for_backward(a, h)
        return h

    @staticmethod
    def backward(ctx, grad_h):
        a, h = ctx.saved_tensors
        g = torch.empty_like(grad_h)
        carry = torch.zeros_like(grad_h[..., 0, :, :])
        for t in range(grad_h.shape[-3] - 1, -1, -1):
            carry = grad_h[..., t, :, :] + carry
            g[..., t, :, :] = carry
            carry = carry * a[..., t, :, :]
        h_prev = torch.zeros_like(h)
        h_prev[..., 1:, :, :] = h[..., :-1, :, :]
        return g * h_prev, g


def linear_recurrence(a: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
    """All states of ``h_t = a_t * h_{t-1} + u_t`` with ``h_{-1} = 0``.

    ``a`` and ``u`` are ``[..., T, k, d]`` (``a`` is broadcast to ``u``).  The
    time loop runs outside autograd; the backward pass is the adjoint
    recurrence run in reverse.
    """
    a = a.expand_as(u).contiguous()
    return _LinearRecurrence.apply(a, u.contiguous())


def cosine_similarity(a: torch.Tensor, b: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Row-wise cosine along the last axis.

    Returns ``(cos, degenerate)`` where ``degenerate`` marks rows in which either
    vector has zero norm; those rows get cosine 0.
    """
    ssa = (a * a).sum(dim=-1)
    ssb = (b * b).sum(dim=-1)
    degenerate = (ssa == 0) | (ssb == 0)
    # one sqrt of the product: sqrt(fl(s * s)) == s, so cos(q, q) is exactly 1
    denom = torch.where(degenerate, torch.ones_like(ssa), ssa * ssb).sqrt()
    cos = (a * b).sum(dim=-1) / denom
    return torch.where(degenerate, torch.zeros_like(cos), cos), degenerate


def backward(loss: torch.Tensor) -> None:
    if loss.ndim != 0:
        raise ValueError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    ensure_finite(loss.detach(), "loss")
    loss.backward()


def zero_grads(params: Iterable[torch.Tensor]) -> None:
    for p in params:
        p.grad = None


def adamw(
    params: Iterable[torch.nn.Parameter],
    lr: float = 0.005,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> torch.optim.AdamW:
    """AdamW over the trainable subset of ``params``.

    Frozen parameters are never handed to the optimizer, so their values stay
    bit-identical across steps.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    trainable = [p for p in params if p.requires_grad]
    if not trainable:
        raise ValueError("no trainable parameters")
    return torch.optim.AdamW(trainable, lr=lr, betas=betas, eps=eps, weight_decay=weight_decay)


# ---------------------------------------------------------------------------
# gradient verification


def _fd_error(f: Callable[[], torch.Tensor], flat: torch.Tensor, i: int, analytic: float, h: float) -> float:
    orig = flat[i].item()
    flat[i] = orig + h
    up = f().item()
    flat[i] = orig - h
    down = f().item()
    flat[i] = orig
    numeric = (up - down) / (2 * h)
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_coords: int
    per_param: dict[str, float] = field(default_factory=dict)
    refined: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def as_dict(self) -> dict:
        return {
            "max_rel_error": self.max_rel_error,
            "tol": self.tol,
            "n_coords": self.n_coords,
            "passed": self.passed,
            "per_param": dict(self.per_param),
            "refined": list(self.refined),
        }


def grad_check(
    f: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor] | dict[str, torch.Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int | None = None,
    rng: RngStream | None = None,
    refine: bool = True,
) -> GradCheckReport:
    """Compare autograd gradients of ``f()`` with central differences.

    ``f`` must be deterministic (rebuild any random draws from a fixed seed on
    every call).  Relative error per coordinate is
    ``|a - n| / max(1, |a|, |n|)``.  ``max_coords`` caps the number of probed
    coordinates per parameter (sampled with ``rng``); ``None`` probes all.

    A central difference whose stencil straddles a ReLU or clamp kink is not a
    derivative estimate at all.  With ``refine`` a coordinate that fails at
    ``h`` is probed once more at ``h / 10``; the smaller error is kept and the
    coordinate is listed in ``refined``.  A wrong analytic gradient fails at
    both step sizes.
    """
    if isinstance(params, dict):
        named = list(params.items())
    else:
        named = [(f"p{i}", p) for i, p in enumerate(params)]
    for _, p in named:
        p.grad = None
    loss = f()
    if loss.ndim != 0:
        raise ValueError("grad_check needs a scalar-valued function")
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)

    worst = 0.0
    n = 0
    per_param: dict[str, float] = {}
    refined: list[str] = []
    with torch.no_grad():
        for (name, p), g in zip(named, grads):
            analytic = torch.zeros_like(p) if g is None else g
            flat = p.view(-1)
            analytic_flat = analytic.reshape(-1)
            idx = range(flat.numel())
            if max_coords is not None and flat.numel() > max_coords:
                r = rng or RngStream(0, ("grad_check", name))
                idx = sorted(r.generator.choice(flat.numel(), size=max_coords, replace=False).tolist())
            err_p = 0.0
            for i in idx:
                a = analytic_flat[i].item()
                err = _fd_error(f, flat, i, a, h)
                if refine and err > tol:
                    err = min(err, _fd_error(f, flat, i, a, h / 10))
                    refined.append(f"{name}[{i}]")
                err_p = max(err_p, err)
                n += 1
            per_param[name] = err_p
            worst = max(worst, err_p)
    if math.isnan(worst):
        worst = math.inf
    return GradCheckReport(max_rel_error=worst, tol=tol, n_coords=n, per_param=per_param, refined=refined)
