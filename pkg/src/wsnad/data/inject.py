"""Anomaly injection: point, contextual, collective and correlation anomalies."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from ..numeric import RngStream
from .series import SensorSeries

ANOMALY_TYPES = ("point", "contextual", "collective", "correlation")


@dataclass
class AnomalySpec:
    type: str
    rate: float
    magnitude: float = 8.0
    duration: int = 1
    seed: int = 0
    pattern: str = "shift"  # collective only: "shift" or "flat"
    modality: int | None = None  # restrict to one modality; correlation defaults to 1
    reference: int = 0  # correlation only: the modality the perturbed one is coupled to

    def __post_init__(self) -> None:
        if self.type not in ANOMALY_TYPES:
            raise ValueError(f"unknown anomaly type {self.type!r}")
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"rate must lie in [0, 1), got {self.rate}")
        if self.duration < 1:
            raise ValueError("duration must be at least 1")
        if self.type in ("point", "contextual") and self.duration != 1:
            raise ValueError(f"{self.type} anomalies last exactly one step")
        if self.pattern not in ("shift", "flat"):
            raise ValueError(f"unknown collective pattern {self.pattern!r}")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class InjectionEvent:
    type: str
    node: int
    modality: int
    start: int
    duration: int
    delta: float  # signed shift for point/collective, injected value for contextual, 0 otherwise

    def as_dict(self) -> dict:
        return asdict(self)


class Injected(NamedTuple):
    series: SensorSeries
    labels: np.ndarray
    events: list[InjectionEvent]


def local_std(x: np.ndarray, half_width: int = 25) -> np.ndarray:
    """Rolling population std over ``[t - half_width, t + half_width]`` (clipped at the ends)."""
    t = x.shape[-1]
    c1 = np.concatenate([np.zeros(x.shape[:-1] + (1,)), np.cumsum(x, axis=-1)], axis=-1)
    c2 = np.concatenate([np.zeros(x.shape[:-1] + (1,)), np.cumsum(x * x, axis=-1)], axis=-1)
    lo = np.clip(np.arange(t) - half_width, 0, t)
    hi = np.clip(np.arange(t) + half_width + 1, 0, t)
    cnt = hi - lo
    mean = (c1[..., hi] - c1[..., lo]) / cnt
    var = (c2[..., hi] - c2[..., lo]) / cnt - mean**2
    return np.sqrt(np.maximum(var, 0.0))


def _local_mean(x: np.ndarray, t: int, half_width: int) -> float:
    return float(x[max(0, t - half_width) : t + half_width + 1].mean())


class _Placer:
    def __init__(self, shape: tuple[int, int, int], rng: np.random.Generator, gap: int):
        self.busy = np.zeros(shape, dtype=bool)
        self.rng = rng
        self.gap = gap

    def free(self, node: int, mods: list[int], start: int, duration: int) -> bool:
        lo = max(0, start - self.gap)
        hi = start + duration + self.gap
        return not self.busy[node, mods, lo:hi].any()

    def take(self, node: int, mods: list[int], start: int, duration: int) -> None:
        self.busy[node, mods, start : start + duration] = True


def inject_anomalies(
    series: SensorSeries,
    specs: list[AnomalySpec],
    context: int = 25,
    gap: int = 1,
    max_tries: int = 200,
) -> Injected:
    """Inject anomalies; returns the perturbed series, exact cell labels and the event record.

    ``rate`` is the fraction of all ``N * M * T`` cells a spec should perturb;
    segment types place ``round(rate * N * M * T / duration)`` events.  Events
    never overlap on the same (node, modality) and keep ``gap`` clean steps
    between them.
    """
    clean = series.values
    x = clean.copy()
    n, m, t = x.shape
    labels = np.zeros((n, m, t), dtype=np.int8)
    events: list[InjectionEvent] = []
    lstd = local_std(clean, context)
    gmin = clean.min(axis=2)
    gmax = clean.max(axis=2)
    q_lo = np.quantile(clean, 0.05, axis=2)
    q_hi = np.quantile(clean, 0.95, axis=2)
    placer = _Placer((n, m, t), RngStream(0).generator, gap)

    for spec_i, spec in enumerate(specs):
        rng = RngStream(spec.seed, ("inject", spec_i, spec.type)).generator
        placer.rng = rng
        n_events = int(round(spec.rate * n * m * t / spec.duration))
        if spec.type == "correlation":
            if m < 2:
                raise ValueError("correlation anomalies need at least two modalities")
            target_mod = 1 if spec.modality is None else spec.modality
            if target_mod == spec.reference:
                raise ValueError("correlation anomaly needs distinct perturbed and reference modalities")
        d = spec.duration
        if d > t:
            raise ValueError(f"duration {d} exceeds series length {t}")
        placed = 0
        tries = 0
        while placed < n_events:
            tries += 1
            if tries > max_tries * max(n_events, 1):
                raise ValueError(
                    f"could only place {placed} of {n_events} {spec.type} anomalies; rate {spec.rate} is infeasible"
                )
            node = int(rng.integers(n))
            start = int(rng.integers(t - d + 1))
            if spec.type == "correlation":
                mod = target_mod
                mods = [mod, spec.reference]
            else:
                mod = int(rng.integers(m)) if spec.modality is None else spec.modality
                mods = [mod]
            if not placer.free(node, mods, start, d):
                continue

            seg = slice(start, start + d)
            delta = 0.0
            if spec.type == "point":
                sign = 1.0 if rng.random() < 0.5 else -1.0
                delta = sign * spec.magnitude * lstd[node, mod, start]
                if delta == 0.0:
                    continue
                x[node, mod, start] = clean[node, mod, start] + delta
            elif spec.type == "contextual":
                here = _local_mean(clean[node, mod], start, context)
                cands = (q_lo[node, mod], q_hi[node, mod])
                value = max(cands, key=lambda v: abs(v - here))
                # globally ordinary, locally far off
                if abs(value - clean[node, mod, start]) < spec.magnitude * lstd[node, mod, start]:
                    continue
                delta = float(value)
                x[node, mod, start] = value
            elif spec.type == "collective":
                if spec.pattern == "shift":
                    sign = 1.0 if rng.random() < 0.5 else -1.0
                    delta = sign * spec.magnitude * lstd[node, mod, start]
                    if delta == 0.0:
                        continue
                    x[node, mod, seg] = clean[node, mod, seg] + delta
                else:
                    level = clean[node, mod, start - 1] if start > 0 else clean[node, mod, seg].mean()
                    if np.any(clean[node, mod, seg] == level):
                        continue
                    x[node, mod, seg] = level
                    delta = float(level)
            else:  # correlation
                seg_vals = clean[node, mod, seg]
                reflected = np.clip(2.0 * seg_vals.mean() - seg_vals, gmin[node, mod], gmax[node, mod])
                if np.any(reflected == seg_vals):
                    continue
                x[node, mod, seg] = reflected
            placer.take(node, mods, start, d)
            labels[node, mod, seg] = 1
            events.append(InjectionEvent(spec.type, node, mod, start, d, float(delta)))
            placed += 1

    out = SensorSeries(x, list(series.node_ids), list(series.modality_names), series.sample_interval, series.start_epoch)
    return Injected(out, labels, events)


STOCK_SPECS = {
    "point": {"magnitude": 8.0, "duration": 1},
    "contextual": {"magnitude": 3.0, "duration": 1},
    "collective": {"magnitude": 5.0, "duration": 10},
    "correlation": {"magnitude": 0.0, "duration": 40},
}


def default_specs(
    rate: float = 0.02,
    seed: int = 0,
    types=ANOMALY_TYPES,
    overrides: dict[str, dict] | None = None,
) -> list[AnomalySpec]:
    """Split ``rate`` evenly over the requested anomaly types with stock settings.

    ``overrides`` maps a type to replacement fields, e.g.
    ``{"collective": {"duration": 5}}``.
    """
    share = rate / len(types)
    out = []
    for tp in types:
        fields = dict(STOCK_SPECS[tp])
        fields.update((overrides or {}).get(tp, {}))
        out.append(AnomalySpec(tp, share, seed=seed, **fields))
    return out
