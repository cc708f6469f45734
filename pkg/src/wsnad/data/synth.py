"""Synthetic WSN telemetry with cross-modal and spatial structure."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..numeric import RngStream
from .series import IBRL_MODALITIES, SensorGraph, SensorSeries


@dataclass
class SynthParams:
    period: float = 200.0  # steps per diurnal cycle
    temp_base: float = 22.0
    temp_amplitude: float = 5.0
    phase_jitter: float = 0.3  # radians, per-node phase offset range
    local_coef: float = 0.99  # node-local slow temperature component
    local_std: float = 0.15
    ar_coef: float = 0.5
    noise_std: float = 0.3  # AR(1) innovation std
    coupling: float = 1.5  # humidity = -coupling * temperature + offset + noise
    humidity_offset: float = 75.0
    drift_coef: float = 0.995
    drift_std: float = 0.05
    drift_level: float = 2.7
    spatial_mix: float = 0.3
    sample_interval: float = 31.0

    def as_dict(self) -> dict:
        return asdict(self)


def _ar1(rng: np.random.Generator, shape: tuple[int, ...], coef: float, std: float) -> np.ndarray:
    t = shape[-1]
    eps = rng.standard_normal(shape) * std
    out = np.empty(shape)
    # start from the stationary distribution so there is no burn-in transient
    out[..., 0] = eps[..., 0] / np.sqrt(max(1.0 - coef**2, 1e-12))
    for i in range(1, t):
        out[..., i] = coef * out[..., i - 1] + eps[..., i]
    return out


def _modality_names(m: int) -> list[str]:
    if m <= len(IBRL_MODALITIES):
        return list(IBRL_MODALITIES[:m])
    return list(IBRL_MODALITIES) + [f"channel{i}" for i in range(len(IBRL_MODALITIES), m)]


def synth_generate(
    n_nodes: int,
    n_modalities: int,
    t: int,
    graph: SensorGraph,
    seed: int,
    params: SynthParams | None = None,
) -> SensorSeries:
    """Generate a clean series.

    Per node: modality 0 is a diurnal sinusoid plus a slow node-local AR(1)
    component and fast AR(1) noise; modality 1 is
    ``-coupling * modality0 + offset`` plus independent AR(1) noise; further
    modalities are a slow AR drift plus noise.  A single spatial mixing pass
    ``x_i <- (1 - lam) x_i + lam * mean(x_j for neighbours j)`` then correlates
    adjacent nodes.
    """
    p = params or SynthParams()
    if n_modalities < 2:
        raise ValueError("need at least two modalities for cross-modal coupling")
    if graph.n_nodes != n_nodes:
        raise ValueError(f"graph has {graph.n_nodes} nodes, expected {n_nodes}")
    if t < 1 or n_nodes < 1:
        raise ValueError("need at least one node and one step")
    rng = RngStream(seed, ("synth",)).generator
    steps = np.arange(t, dtype=np.float64)
    phase = rng.uniform(-p.phase_jitter, p.phase_jitter, size=(n_nodes, 1))
    base = p.temp_base + rng.uniform(-1.0, 1.0, size=(n_nodes, 1))
    amp = p.temp_amplitude * rng.uniform(0.8, 1.2, size=(n_nodes, 1))
    values = np.empty((n_nodes, n_modalities, t))
    temp = base + amp * np.sin(2 * np.pi * steps / p.period + phase)
    local = _ar1(rng, (n_nodes, t), p.local_coef, p.local_std)
    values[:, 0] = temp + local + _ar1(rng, (n_nodes, t), p.ar_coef, p.noise_std)
    values[:, 1] = -p.coupling * values[:, 0] + p.humidity_offset + _ar1(rng, (n_nodes, t), p.ar_coef, p.noise_std)
    for m in range(2, n_modalities):
        level = p.drift_level * (1.0 + 0.1 * rng.standard_normal((n_nodes, 1)))
        drift = _ar1(rng, (n_nodes, t), p.drift_coef, p.drift_std)
        values[:, m] = level + drift + _ar1(rng, (n_nodes, t), p.ar_coef, p.noise_std * 0.3)

    lam = p.spatial_mix
    if lam:
        a = graph.adjacency.astype(np.float64)
        deg = a.sum(axis=1)
        mixed = values.copy()
        for i in range(n_nodes):
            if deg[i] > 0:
                nb = np.tensordot(a[i], values, axes=(0, 0)) / deg[i]
                mixed[i] = (1 - lam) * values[i] + lam * nb
        values = mixed
    ids = list(range(1, n_nodes + 1))
    return SensorSeries(values, ids, _modality_names(n_modalities), p.sample_interval, 0)
