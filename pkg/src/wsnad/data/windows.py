"""Sliding windows with per-window z-score standardization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
import torch

from ..numeric import RngStream
from .series import SensorSeries

DEFAULT_EPSILON = 1e-8


def window_count(t: int, w: int, s: int, t0: int = 0) -> int:
    if w < 1 or s < 1:
        raise ValueError("window length and stride must be positive")
    if t0 + w >= t:
        raise ValueError(f"window length {w} leaves no target step in a series of length {t}")
    return (t - 1 - w - t0) // s + 1


def window_starts(t: int, w: int, s: int, t0: int = 0) -> np.ndarray:
    return t0 + s * np.arange(window_count(t, w, s, t0))


def standardize(x, epsilon: float = DEFAULT_EPSILON):
    """Z-score along the last axis with population statistics.

    Returns ``(z, mu, sigma)``; ``mu`` and ``sigma`` keep a trailing axis of
    length one so they broadcast back over the slice.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    sigma = np.sqrt(((x - mu) ** 2).mean(axis=-1, keepdims=True))
    return (x - mu) / (sigma + epsilon), mu, sigma


def destandardize(z, mu, sigma, epsilon: float = DEFAULT_EPSILON):
    return np.asarray(z) * (np.asarray(sigma) + epsilon) + np.asarray(mu)


@dataclass
class Standardizer:
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    def __call__(self, x):
        return standardize(x, self.epsilon)

    def inverse(self, z, mu, sigma):
        return destandardize(z, mu, sigma, self.epsilon)


@dataclass
class WindowBatch:
    """Standardized windows ``[B, N, M, w]`` with next-step targets ``[B, N, M]``.

    ``mu``/``sigma`` (``[B, N, M]``) are the statistics used for each window
    slice; the standardized target uses the same statistics as its window.
    """

    windows: np.ndarray
    targets_raw: np.ndarray
    targets: np.ndarray
    labels: np.ndarray
    starts: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    w: int
    epsilon: float = DEFAULT_EPSILON

    def __len__(self) -> int:
        return len(self.starts)

    @property
    def target_steps(self) -> np.ndarray:
        return self.starts + self.w

    def subset(self, idx) -> WindowBatch:
        idx = np.asarray(idx)
        return WindowBatch(
            self.windows[idx],
            self.targets_raw[idx],
            self.targets[idx],
            self.labels[idx],
            self.starts[idx],
            self.mu[idx],
            self.sigma[idx],
            self.w,
            self.epsilon,
        )

    def to_raw(self, standardized: np.ndarray) -> np.ndarray:
        """Map a standardized ``[B, N, M]`` array (e.g. predictions) to raw units."""
        return destandardize(standardized, self.mu, self.sigma, self.epsilon)

    def batches(
        self, batch_size: int, rng: RngStream | None = None
    ) -> Iterator[tuple[torch.Tensor, torch.Tensor, np.ndarray]]:
        """Yield ``(windows, targets, index)`` minibatches; shuffled when ``rng`` is given."""
        order = np.arange(len(self))
        if rng is not None:
            order = rng.generator.permutation(len(self))
        for i in range(0, len(order), batch_size):
            idx = order[i : i + batch_size]
            yield torch.from_numpy(self.windows[idx]), torch.from_numpy(self.targets[idx]), idx


def slide_windows(
    series: SensorSeries | np.ndarray,
    w: int = 300,
    s: int = 1,
    labels: np.ndarray | None = None,
    t0: int = 0,
    epsilon: float = DEFAULT_EPSILON,
    stats: str = "window",
    global_mu: np.ndarray | None = None,
    global_sigma: np.ndarray | None = None,
) -> WindowBatch:
    """Cut ``[t0 + b*s, t0 + b*s + w)`` windows with the target at ``t0 + b*s + w``.

    ``stats="window"`` standardizes each (window, node, modality) slice with its
    own statistics; ``stats="global"`` uses the given per-(node, modality)
    ``global_mu``/``global_sigma`` instead (e.g. from a training split).
    """
    values = series.values if isinstance(series, SensorSeries) else np.asarray(series, dtype=np.float64)
    n, m, t = values.shape
    starts = window_starts(t, w, s, t0)
    view = np.lib.stride_tricks.sliding_window_view(values, w, axis=2)  # N, M, T-w+1, w
    raw = np.ascontiguousarray(view[:, :, starts, :].transpose(2, 0, 1, 3))  # B, N, M, w
    targets_raw = np.ascontiguousarray(values[:, :, starts + w].transpose(2, 0, 1))
    if stats == "window":
        z, mu, sigma = standardize(raw, epsilon)
        mu, sigma = mu[..., 0], sigma[..., 0]
    elif stats == "global":
        if global_mu is None or global_sigma is None:
            raise ValueError("global statistics require global_mu and global_sigma")
        mu = np.broadcast_to(np.asarray(global_mu, dtype=np.float64), (len(starts), n, m)).copy()
        sigma = np.broadcast_to(np.asarray(global_sigma, dtype=np.float64), (len(starts), n, m)).copy()
        z = (raw - mu[..., None]) / (sigma[..., None] + epsilon)
    else:
        raise ValueError(f"unknown standardization mode {stats!r}")
    targets = (targets_raw - mu) / (sigma + epsilon)
    if labels is None:
        tl = np.zeros((len(starts), n, m), dtype=np.int8)
    else:
        tl = np.ascontiguousarray(np.asarray(labels)[:, :, starts + w].transpose(2, 0, 1)).astype(np.int8)
    return WindowBatch(z, targets_raw, targets, tl, starts, mu, sigma, w, epsilon)
