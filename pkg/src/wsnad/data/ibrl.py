"""Reader and writer for Intel Berkeley Research Lab style telemetry.

Reading lines look like::

    2004-02-28 00:59:16.02785 3 1 19.9884 37.0933 45.08 2.69964

i.e. ``date time epoch moteid temperature humidity light voltage``.  The
coordinates file holds ``moteid x y`` per line.
"""

from __future__ import annotations

import logging
from datetime import datetime, timedelta
from typing import Iterable, NamedTuple

import numpy as np

from .graph import build_adjacency
from .series import IBRL_INTERVAL_S, IBRL_MODALITIES, IngestReport, SensorGraph, SensorSeries

log = logging.getLogger(__name__)

HUMIDITY_RANGE = (-10.0, 110.0)
VOLTAGE_RANGE = (0.0, 5.0)  # open below, closed above
_BASE_TIME = datetime(2004, 2, 28)


class IbrlData(NamedTuple):
    series: SensorSeries
    graph: SensorGraph
    report: IngestReport


def _lines(source) -> Iterable[str]:
    if isinstance(source, str):
        return source.splitlines()
    return source


def parse_coordinates(source) -> dict[int, tuple[float, float]]:
    coords: dict[int, tuple[float, float]] = {}
    for lineno, line in enumerate(_lines(source), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 3:
            raise ValueError(f"coordinates line {lineno}: expected 'moteid x y', got {line!r}")
        coords[int(parts[0])] = (float(parts[1]), float(parts[2]))
    return coords


def _fill_gaps(x: np.ndarray, ffill_limit: int, report: IngestReport) -> None:
    """Fill NaN runs in place: short runs forward-filled, long interior runs interpolated."""
    missing = np.isnan(x)
    if not missing.any():
        return
    t = len(x)
    i = 0
    while i < t:
        if not missing[i]:
            i += 1
            continue
        j = i
        while j < t and missing[j]:
            j += 1
        run = j - i
        if i == 0:
            x[:j] = x[j]  # leading gap: nothing to carry forward, back-fill
            report.filled_ffill += run
        elif j == t or run <= ffill_limit:
            x[i:j] = x[i - 1]
            report.filled_ffill += run
        else:
            left, right = x[i - 1], x[j]
            frac = np.arange(1, run + 1) / (run + 1)
            x[i:j] = left + (right - left) * frac
            report.filled_interp += run
        i = j


def parse_ibrl(
    source,
    coordinates=None,
    k: int = 4,
    ffill_limit: int = 10,
    max_missing: float = 0.4,
    max_malformed: float = 0.05,
    sample_interval: float = IBRL_INTERVAL_S,
) -> IbrlData:
    """Parse IBRL readings onto a uniform epoch grid.

    ``coordinates`` may be a mapping ``moteid -> (x, y)`` or coordinate-file
    text/lines; without it the returned graph has no edges.
    """
    report = IngestReport()
    rows: dict[tuple[int, int], tuple[float, float, float, float]] = {}
    n_content = 0
    for line in _lines(source):
        parts = line.split()
        if not parts:
            continue
        n_content += 1
        if len(parts) != 8:
            report.malformed += 1
            continue
        try:
            epoch = int(parts[2])
            mote = int(parts[3])
            vals = tuple(float(p) for p in parts[4:8])
        except ValueError:
            report.malformed += 1
            continue
        if (epoch, mote) in rows:
            report.duplicates += 1
            continue
        rows[(epoch, mote)] = vals  # type: ignore[assignment]
    report.n_lines = n_content
    if n_content and report.malformed / n_content > max_malformed:
        raise ValueError(
            f"{report.malformed} of {n_content} lines malformed (> {max_malformed:.0%} allowed)"
        )
    if not rows:
        raise ValueError("no readings parsed")

    epochs = sorted({e for e, _ in rows})
    motes = sorted({m for _, m in rows})
    e0 = epochs[0]
    t = epochs[-1] - e0 + 1
    mote_index = {m: i for i, m in enumerate(motes)}
    values = np.full((len(motes), len(IBRL_MODALITIES), t), np.nan)
    for (epoch, mote), vals in rows.items():
        values[mote_index[mote], :, epoch - e0] = vals

    hum = values[:, 1, :]
    bad_h = ~np.isnan(hum) & ((hum < HUMIDITY_RANGE[0]) | (hum > HUMIDITY_RANGE[1]))
    volt = values[:, 3, :]
    bad_v = ~np.isnan(volt) & ((volt <= VOLTAGE_RANGE[0]) | (volt > VOLTAGE_RANGE[1]))
    report.impossible = int(bad_h.sum() + bad_v.sum())
    hum[bad_h] = np.nan
    volt[bad_v] = np.nan

    missing_frac = np.isnan(values).mean(axis=2).max(axis=1)
    keep = [i for i in range(len(motes)) if missing_frac[i] <= max_missing]
    report.dropped_nodes = [motes[i] for i in range(len(motes)) if i not in keep]
    for mote in report.dropped_nodes:
        log.warning("dropping mote %d: %.0f%% of epochs missing", mote, 100 * missing_frac[mote_index[mote]])
    if not keep:
        raise ValueError("every node exceeds the missing-data limit")
    values = values[keep]
    node_ids = [motes[i] for i in keep]
    for n in range(values.shape[0]):
        for m in range(values.shape[1]):
            _fill_gaps(values[n, m], ffill_limit, report)

    series = SensorSeries(values, node_ids, list(IBRL_MODALITIES), sample_interval, e0)
    graph = _graph_for(node_ids, coordinates, k)
    return IbrlData(series, graph, report)


def _graph_for(node_ids: list[int], coordinates, k: int) -> SensorGraph:
    n = len(node_ids)
    if coordinates is None:
        return SensorGraph(np.zeros((n, n), dtype=np.int64))
    if not isinstance(coordinates, dict):
        coordinates = parse_coordinates(coordinates)
    missing = [m for m in node_ids if m not in coordinates]
    if missing:
        raise ValueError(f"no coordinates for motes {missing}")
    coords = np.array([coordinates[m] for m in node_ids], dtype=np.float64)
    if n == 1:
        return SensorGraph(np.zeros((1, 1), dtype=np.int64), coords)
    return build_adjacency(coords, min(k, n - 1))


def format_ibrl(series: SensorSeries) -> str:
    """Serialize to IBRL reading lines (values written with round-trip precision)."""
    if list(series.modality_names) != list(IBRL_MODALITIES):
        raise ValueError("IBRL format needs exactly the four IBRL modalities in order")
    out = []
    for step in range(series.n_steps):
        epoch = series.start_epoch + step
        stamp = _BASE_TIME + timedelta(seconds=epoch * series.sample_interval)
        date, clock = stamp.strftime("%Y-%m-%d"), stamp.strftime("%H:%M:%S.%f")
        for n, mote in enumerate(series.node_ids):
            vals = " ".join(repr(float(v)) for v in series.values[n, :, step])
            out.append(f"{date} {clock} {epoch} {mote} {vals}")
    return "\n".join(out) + "\n"
